//! Plain-text model checkpoints.
//!
//! One record per line: a format tag, the training config as JSON, input
//! dimensions, training-set size, stick parameters, and every parameter tensor
//! with its shape. Floats use Rust's shortest round-trip formatting, so a
//! reload reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{DpmmError, Result};
use crate::grad::{ParamStore, ParamTensor};
use crate::model::{Model, TrainConfig};
use crate::stick::StickState;

const FORMAT_TAG: &str = "dpmm-checkpoint 1";

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

pub fn to_string(model: &Model) -> Result<String> {
    let mut out = String::new();
    let config = serde_json::to_string(&model.config).map_err(|e| DpmmError::Config(e.to_string()))?;
    let _ = writeln!(out, "{FORMAT_TAG}");
    let _ = writeln!(out, "config {config}");
    let _ = writeln!(out, "input_dims {}", join(&model.input_dims));
    let _ = writeln!(out, "n_total {}", model.n_total);
    let _ = writeln!(out, "eta {}", model.sticks.eta);
    let _ = writeln!(out, "gamma1 {}", join(&model.sticks.gamma1));
    let _ = writeln!(out, "gamma2 {}", join(&model.sticks.gamma2));
    for p in model.params.iter() {
        let shape = p.shape.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        let _ = writeln!(out, "param {} {} {}", p.name, shape, join(&p.values));
    }
    Ok(out)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> DpmmError {
        DpmmError::Parse {
            line: self.last,
            message: message.into(),
        }
    }

    fn next_raw(&mut self) -> Option<&'a str> {
        let (i, l) = self.inner.next()?;
        self.last = i + 1;
        Some(l)
    }

    /// Next line, which must start with `key`; returns the remainder.
    fn field(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_raw().ok_or_else(|| self.err(format!("missing `{key}` record")))?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest),
            _ if line == key => Ok(""),
            _ => Err(self.err(format!("expected `{key}` record"))),
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Vec<T>> {
        let rest = self.field(key)?;
        self.parse_list(rest)
    }

    fn parse_list<T: std::str::FromStr>(&self, s: &str) -> Result<Vec<T>> {
        s.split_whitespace()
            .map(|t| t.parse::<T>().map_err(|_| self.err(format!("cannot parse `{t}`"))))
            .collect()
    }
}

pub fn from_str(text: &str) -> Result<Model> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    if lines.next_raw() != Some(FORMAT_TAG) {
        return Err(lines.err("not a dpmm checkpoint"));
    }
    let config_json = lines.field("config")?;
    let config: TrainConfig = serde_json::from_str(config_json).map_err(|e| lines.err(e.to_string()))?;
    let input_dims: Vec<usize> = lines.list("input_dims")?;
    let n_total: Vec<usize> = lines.list("n_total")?;
    let eta: Vec<f64> = lines.list("eta")?;
    let gamma1: Vec<f64> = lines.list("gamma1")?;
    let gamma2: Vec<f64> = lines.list("gamma2")?;
    let (&[n_total], &[eta]) = (n_total.as_slice(), eta.as_slice()) else {
        return Err(lines.err("n_total and eta take exactly one value"));
    };
    let sticks = StickState::new(gamma1, gamma2, eta, input_dims.len(), config.truncation)
        .map_err(|e| DpmmError::SchemaMismatch(e.to_string()))?;
    let mut params = ParamStore::new();
    while let Some(line) = lines.next_raw() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(4, ' ');
        let (Some("param"), Some(name), Some(shape)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(lines.err("expected `param <name> <shape> <values>`"));
        };
        let shape: Vec<usize> = lines.parse_list(&shape.replace(',', " "))?;
        let values: Vec<f64> = lines.parse_list(parts.next().unwrap_or(""))?;
        let tensor = ParamTensor::new(name, shape, values).map_err(|e| lines.err(e.to_string()))?;
        params.add(tensor);
    }
    Model::from_parts(config, input_dims, params, sticks, n_total)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_string(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    from_str(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::WeightMode;

    fn model(weight_mode: WeightMode) -> Model {
        let cfg = TrainConfig {
            latent_dim: 3,
            hidden_dim: 5,
            weight_mode,
            seed: 11,
            ..TrainConfig::default()
        };
        let mut m = Model::new(&[4, 2], cfg, 123).unwrap();
        m.sticks.gamma1[1] = 0.1 + 0.2;
        m.sticks.gamma2[0] = 1.0 / 3.0;
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for mode in [WeightMode::Dp, WeightMode::Learnable] {
            let m = model(mode);
            let back = from_str(&to_string(&m).unwrap()).unwrap();
            assert_eq!(back.config, m.config);
            assert_eq!(back.input_dims, m.input_dims);
            assert_eq!(back.n_total, m.n_total);
            assert_eq!(back.sticks, m.sticks);
            let bits = |s: &ParamStore| s.flat_values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&back.params), bits(&m.params));
            assert_eq!(to_string(&back).unwrap(), to_string(&m).unwrap());
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = model(WeightMode::Dp);
        save(&m, &path).unwrap();
        assert_eq!(load(&path).unwrap().params, m.params);
    }

    #[test]
    fn malformed_input_reports_line() {
        let text = to_string(&model(WeightMode::Dp)).unwrap();
        let broken = text.replacen("n_total 123", "n_total abc", 1);
        match from_str(&broken) {
            Err(DpmmError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(from_str("garbage"), Err(DpmmError::Parse { line: 1, .. })));
    }

    #[test]
    fn shape_tampering_is_schema_mismatch() {
        let text = to_string(&model(WeightMode::Dp)).unwrap();
        let kept: Vec<&str> = text.lines().filter(|l| !l.starts_with("param head.b")).collect();
        assert!(matches!(from_str(&kept.join("\n")), Err(DpmmError::SchemaMismatch(_))));
    }
}
