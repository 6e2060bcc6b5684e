//! End-to-end runs of the `dpmm` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn dpmm(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpmm"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, value: Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    p
}

fn small_config(extra: Value) -> Value {
    let mut base = json!({
        "num_modalities": 2,
        "clusters": 3,
        "input_dims": [4, 3],
        "separation": 4.0,
        "noise": 1.0,
        "label_noise": 0.05,
        "n": 200,
        "seed": 1,
        "latent_dim": 3,
        "hidden_dim": 6,
        "learning_rate": 0.01,
        "epochs": 3,
        "bootstrap_resamples": 100
    });
    base.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    base
}

fn line_count(p: &Path) -> usize {
    fs::read_to_string(p).unwrap().lines().count()
}

#[test]
fn generate_default_config_sizes_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark.json");
    for out in ["a", "b"] {
        let o = dpmm(dir.path(), &["generate", "--config", cfg.to_str().unwrap(), "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = dir.path().join("a");
    assert_eq!(line_count(&a.join("train.jsonl")), 1400);
    assert_eq!(line_count(&a.join("valid.jsonl")), 200);
    assert_eq!(line_count(&a.join("test.jsonl")), 400);
    for f in ["train.jsonl", "valid.jsonl", "test.jsonl", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(json!({}));
    cfg.as_object_mut().unwrap().remove("separation");
    write_config(dir.path(), "cfg.json", cfg);
    let o = dpmm(dir.path(), &["generate", "--config", "cfg.json", "--out", "data"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("separation"), "{}", stderr(&o));

    write_config(dir.path(), "typo.json", small_config(json!({"lamda_dp": 0.1})));
    let o = dpmm(dir.path(), &["generate", "--config", "typo.json", "--out", "data"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lamda_dp"));

    let o = dpmm(dir.path(), &["generate", "--out", "data"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_eval_round_trip_and_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "cfg.json", small_config(json!({})));
    assert!(dpmm(d, &["generate", "--config", "cfg.json", "--out", "data"]).status.success());
    let o = dpmm(d, &["fit", "--config", "cfg.json", "--data", "data", "--out", "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["checkpoint.txt", "history.csv", "manifest.json"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(d.join("run/history.csv")).unwrap();
    let header = history.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "epoch,loss,task,dp,kl_sticks,valid_auroc");
    assert_eq!(history.lines().filter(|l| !l.starts_with('#')).count(), 1 + 3);

    let eval = |out: &str| dpmm(d, &["eval", "--checkpoint", "run/checkpoint.txt", "--data-file", "data/test.jsonl", "--out", out]);
    assert!(eval("m1.json").status.success());
    assert!(eval("m2.json").status.success());
    let m1 = fs::read(d.join("m1.json")).unwrap();
    assert_eq!(m1, fs::read(d.join("m2.json")).unwrap());
    let v: Value = serde_json::from_slice(&m1).unwrap();
    for k in ["auroc", "aupr", "f1"] {
        let x = v[k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&x), "{k} = {x}");
    }
    assert!(v["ci"]["auroc"]["lo"].as_f64().unwrap() <= v["auroc"].as_f64().unwrap());

    // a dataset whose second modality has the wrong width
    write_config(d, "wide.json", small_config(json!({"input_dims": [4, 5]})));
    assert!(dpmm(d, &["generate", "--config", "wide.json", "--out", "wide"]).status.success());
    let o = dpmm(d, &["eval", "--checkpoint", "run/checkpoint.txt", "--data-file", "wide/test.jsonl"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    // every label the same
    let single: String = fs::read_to_string(d.join("data/test.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let mut rec: Value = serde_json::from_str(l).unwrap();
            rec["label"] = json!(1);
            format!("{rec}\n")
        })
        .collect();
    fs::write(d.join("single.jsonl"), single).unwrap();
    let o = dpmm(d, &["eval", "--checkpoint", "run/checkpoint.txt", "--data-file", "single.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).to_lowercase().contains("undefined"), "{}", stderr(&o));

    write_config(d, "diverge.json", small_config(json!({"learning_rate": 1e300})));
    let o = dpmm(d, &["fit", "--config", "diverge.json", "--data", "data", "--out", "bad"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverge"), "{}", stderr(&o));
}

#[test]
fn minimal_ablation_grid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(
        d,
        "grid.json",
        small_config(json!({
            "grid_alignment_modes": ["dp", "none"],
            "grid_gps": [true],
            "grid_fusion": ["concat"],
            "grid_weights": ["dp"],
            "grid_missing_ratios": [0.4]
        })),
    );
    let o = dpmm(d, &["ablate", "--config", "grid.json", "--out", "abl"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(d.join("abl/results.csv")).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body.len(), 3);
    assert!(body[0].starts_with("alignment_mode,gps_enabled,fusion_mode,weight_mode,missing_ratio,seed,status,auroc"));
    assert!(body[1].starts_with("dp,true,concat,dp,0.4,1,ok,"));
    assert!(body[2].starts_with("none,true,concat,dp,0.4,1,ok,"));
}

#[test]
fn ablation_records_failed_cells() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(
        d,
        "grid.json",
        small_config(json!({
            "grid_alignment_modes": ["dp"],
            "grid_gps": [true],
            "grid_fusion": ["concat"],
            "grid_weights": ["dp"],
            "grid_missing_ratios": [0.0, 1.5]
        })),
    );
    let o = dpmm(d, &["ablate", "--config", "grid.json", "--out", "abl"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(d.join("abl/results.csv")).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body.len(), 3);
    assert!(body[1].contains(",ok,"));
    assert!(body[2].contains(",error,"), "{}", body[2]);
}

#[test]
fn prior_simulation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |out: &str| dpmm(d, &["prior-sim", "--out", out, "--eta", "1", "--eta", "4", "--mk", "6", "--draws", "20000", "--seed", "3"]);
    assert!(run("a.csv").status.success());
    assert!(run("b.csv").status.success());
    let a = fs::read_to_string(d.join("a.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(d.join("b.csv")).unwrap());
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(a.as_bytes());
    let rows: Vec<(f64, usize, f64, f64)> = rdr.deserialize().map(|r| r.unwrap()).map(|(e, r, m, s, _a): (f64, usize, f64, f64, f64)| (e, r, m, s)).collect();
    assert_eq!(rows.len(), 12);
    let first = rows.iter().find(|r| r.0 == 1.0 && r.1 == 1).unwrap();
    assert!((first.2 - 0.5).abs() < 3.0 * first.3);
    let e4 = rows.iter().find(|r| r.0 == 4.0 && r.1 == 1).unwrap();
    assert!(e4.2 < first.2);

    let o = dpmm(d, &["prior-sim", "--out", "c.csv", "--draws", "10"]);
    assert_eq!(o.status.code(), Some(2));
}
