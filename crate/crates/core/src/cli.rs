//! Command-line front end: data generation, training, evaluation, ablation
//! grids and prior simulation, all driven by one flat JSON config.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::checkpoint;
use crate::data::{self, Dataset, SynthConfig};
use crate::error::{DpmmError, Result};
use crate::metrics::{self, MetricReport, ScoredSet};
use crate::model::{fit, AlignmentMode, EpochRecord, FusionMode, TrainConfig, WeightMode};
use crate::rng::{self, Stream};
use crate::stick::{prior_mean_weight, sample_prior_weights_with};

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALID_FILE: &str = "valid.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const HISTORY_FILE: &str = "history.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESULTS_FILE: &str = "results.csv";

#[derive(Debug, Parser)]
#[command(name = "dpmm", version, about = "Dirichlet-process mixture regularized multimodal learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat JSON config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/valid/test dataset files.
    Generate(Common),
    /// Train a model and write a checkpoint, per-epoch history and manifest.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Directory holding train.jsonl and valid.jsonl.
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a dataset file with a checkpoint and write metrics JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "data-file")]
        data_file: PathBuf,
        /// Metrics JSON path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit and evaluate every cell of an ablation grid.
    Ablate(Common),
    /// Monte Carlo mean stick-breaking weights under the prior.
    PriorSim {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Concentration values; repeatable.
        #[arg(long = "eta")]
        etas: Vec<f64>,
        #[arg(long)]
        mk: Option<usize>,
        #[arg(long)]
        draws: Option<usize>,
    },
}

/// Grid axes for `ablate`; empty seeds means the config seed alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateGrid {
    pub grid_alignment_modes: Vec<AlignmentMode>,
    pub grid_gps: Vec<bool>,
    pub grid_fusion: Vec<FusionMode>,
    pub grid_weights: Vec<WeightMode>,
    pub grid_missing_ratios: Vec<f64>,
    pub grid_seeds: Vec<u64>,
    /// Modality that receives the missingness; defaults to the last one.
    pub grid_missing_modality: Option<usize>,
    /// Worker threads; 0 uses the available parallelism.
    pub grid_workers: usize,
}

impl Default for AblateGrid {
    fn default() -> Self {
        Self {
            grid_alignment_modes: vec![AlignmentMode::Dp, AlignmentMode::Cosine, AlignmentMode::Kl, AlignmentMode::None],
            grid_gps: vec![true, false],
            grid_fusion: vec![FusionMode::Concat, FusionMode::Sum],
            grid_weights: vec![WeightMode::Dp, WeightMode::Learnable],
            grid_missing_ratios: vec![0.0, 0.1, 0.4, 0.7],
            grid_seeds: Vec::new(),
            grid_missing_modality: None,
            grid_workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSimConfig {
    pub prior_etas: Vec<f64>,
    pub prior_mk: usize,
    pub prior_draws: usize,
}

impl Default for PriorSimConfig {
    fn default() -> Self {
        Self {
            prior_etas: vec![0.1, 0.5, 1.0, 2.0, 5.0],
            prior_mk: 16,
            prior_draws: 100_000,
        }
    }
}

/// Provenance embedded in every result file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: Value,
    pub inputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<EpochRecord>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl RunManifest {
    fn new(command: &str, seed: u64, config: Value, inputs: &[&Path]) -> Self {
        Self {
            command: command.into(),
            version: VERSION.into(),
            seed,
            config,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            history: None,
            metrics: None,
            wall_clock_seconds: None,
        }
    }

    /// `# key: value` lines placed above CSV output.
    fn header_block(&self) -> String {
        let mut out = format!("# dpmm {} {}\n# seed: {}\n", self.command, self.version, self.seed);
        out.push_str(&format!("# config: {}\n", self.config));
        if !self.inputs.is_empty() {
            out.push_str(&format!("# inputs: {}\n", self.inputs.join(" ")));
        }
        if let Some(t) = self.wall_clock_seconds {
            out.push_str(&format!("# wall_clock_seconds: {t:.3}\n"));
        }
        out
    }
}

/// Metrics JSON written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOutput {
    #[serde(flatten)]
    pub metrics: MetricReport,
    pub manifest: RunManifest,
}

/// Process exit code for an error: 2 config, 3 divergence, 4 schema mismatch, 1 otherwise.
pub fn exit_code(e: &DpmmError) -> i32 {
    match e {
        DpmmError::Config(_) => 2,
        DpmmError::Divergence { .. } => 3,
        DpmmError::SchemaMismatch(_) => 4,
        _ => 1,
    }
}

fn config_err(e: impl std::fmt::Display) -> DpmmError {
    DpmmError::Config(e.to_string())
}

fn keys_of<T: Serialize + Default>() -> Vec<String> {
    match serde_json::to_value(T::default()) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

/// Flat config file with the seed override applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RawConfig {
    pub map: Map<String, Value>,
}

impl RawConfig {
    pub fn from_value(value: Value, seed: Option<u64>) -> Result<Self> {
        let Value::Object(mut map) = value else {
            return Err(config_err("config must be a JSON object"));
        };
        let known: Vec<String> = [
            keys_of::<SynthConfig>(),
            keys_of::<TrainConfig>(),
            keys_of::<AblateGrid>(),
            keys_of::<PriorSimConfig>(),
        ]
        .concat();
        for (k, v) in &map {
            if !known.contains(k) {
                return Err(config_err(format!("unknown config key `{k}`")));
            }
            if v.is_object() {
                return Err(config_err(format!("config key `{k}` must not be a nested object")));
            }
        }
        if let Some(s) = seed {
            map.insert("seed".into(), Value::from(s));
        }
        Ok(Self { map })
    }

    pub fn read(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_value(value, seed)
    }

    /// Deserializes the keys belonging to `T`; missing required keys are named in the error.
    pub fn section<T: DeserializeOwned + Serialize + Default>(&self) -> Result<T> {
        self.section_with_keys(&keys_of::<T>())
    }

    fn section_with_keys<T: DeserializeOwned>(&self, keys: &[String]) -> Result<T> {
        let sub: Map<String, Value> = self
            .map
            .iter()
            .filter(|(k, _)| keys.contains(k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        serde_json::from_value(Value::Object(sub)).map_err(config_err)
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        let cfg: SynthConfig = self.section()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let cfg: TrainConfig = self.section()?;
        cfg.validate().map_err(config_err)?;
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.map.get("seed").and_then(Value::as_u64).unwrap_or(0)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| DpmmError::InvalidArgument(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn csv_err(e: csv::Error) -> DpmmError {
    DpmmError::Io(std::io::Error::other(e))
}

/// Writes `rows` as CSV below the manifest header block.
fn write_csv<R: Serialize>(path: &Path, manifest: &RunManifest, rows: &[R]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(manifest.header_block().as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_generate(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let raw = RawConfig::read(config, seed)?;
    let cfg = raw.synth()?;
    let (train, valid, test) = data::generate_splits(&cfg)?;
    fs::create_dir_all(out)?;
    data::save(&train, &out.join(TRAIN_FILE))?;
    data::save(&valid, &out.join(VALID_FILE))?;
    data::save(&test, &out.join(TEST_FILE))?;
    let manifest = RunManifest::new("generate", cfg.seed, to_value(&cfg), &[config]);
    write_json(&out.join(MANIFEST_FILE), &manifest)
}

pub fn cmd_fit(config: &Path, data_dir: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let started = Instant::now();
    let raw = RawConfig::read(config, seed)?;
    let cfg = raw.train()?;
    let train = data::load(&data_dir.join(TRAIN_FILE))?;
    let valid = data::load(&data_dir.join(VALID_FILE))?;
    let outcome = fit(&train, &valid, &cfg)?;
    fs::create_dir_all(out)?;
    checkpoint::save(&outcome.model, &out.join(CHECKPOINT_FILE))?;
    let scores = outcome.model.score_dataset(&valid)?;
    let report = metrics::report(
        &ScoredSet::new(scores, valid.labels())?,
        cfg.f1_threshold,
        cfg.bootstrap_resamples,
        cfg.seed,
    )?;
    let mut manifest = RunManifest::new("fit", cfg.seed, to_value(&cfg), &[config, data_dir]);
    manifest.history = Some(outcome.history.clone());
    manifest.metrics = Some(report);
    manifest.wall_clock_seconds = Some(started.elapsed().as_secs_f64());
    write_csv(&out.join(HISTORY_FILE), &manifest, &outcome.history)?;
    write_json(&out.join(MANIFEST_FILE), &manifest)
}

/// Metrics for a dataset file; fails with a schema mismatch when shapes disagree with the checkpoint.
pub fn evaluate_file(checkpoint_path: &Path, data_file: &Path, seed: Option<u64>) -> Result<EvalOutput> {
    let mut model = checkpoint::load(checkpoint_path)?;
    if let Some(s) = seed {
        model.config.seed = s;
    }
    let data: Dataset = data::load(data_file)?;
    for s in &data.samples {
        model.check_schema(s)?;
    }
    let scores = model.score_dataset(&data)?;
    let cfg = &model.config;
    let report = metrics::report(
        &ScoredSet::new(scores, data.labels())?,
        cfg.f1_threshold,
        cfg.bootstrap_resamples,
        cfg.seed,
    )?;
    Ok(EvalOutput {
        metrics: report,
        manifest: RunManifest::new("eval", cfg.seed, to_value(cfg), &[checkpoint_path, data_file]),
    })
}

pub fn cmd_eval(checkpoint_path: &Path, data_file: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let result = evaluate_file(checkpoint_path, data_file, seed)?;
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_json(p, &result)
        }
        None => {
            let text = serde_json::to_string_pretty(&result).map_err(|e| DpmmError::InvalidArgument(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

/// One cell of the ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblateCell {
    pub alignment_mode: AlignmentMode,
    pub gps_enabled: bool,
    pub fusion_mode: FusionMode,
    pub weight_mode: WeightMode,
    pub missing_ratio: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblateRow {
    pub alignment_mode: AlignmentMode,
    pub gps_enabled: bool,
    pub fusion_mode: FusionMode,
    pub weight_mode: WeightMode,
    pub missing_ratio: f64,
    pub seed: u64,
    pub status: String,
    pub auroc: Option<f64>,
    pub aupr: Option<f64>,
    pub f1: Option<f64>,
    pub auroc_lo: Option<f64>,
    pub auroc_hi: Option<f64>,
    pub aupr_lo: Option<f64>,
    pub aupr_hi: Option<f64>,
    pub f1_lo: Option<f64>,
    pub f1_hi: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_run: Option<usize>,
    pub message: String,
}

pub fn grid_cells(grid: &AblateGrid, default_seed: u64) -> Vec<AblateCell> {
    let seeds = if grid.grid_seeds.is_empty() { vec![default_seed] } else { grid.grid_seeds.clone() };
    let mut cells = Vec::new();
    for &alignment_mode in &grid.grid_alignment_modes {
        for &gps_enabled in &grid.grid_gps {
            for &fusion_mode in &grid.grid_fusion {
                for &weight_mode in &grid.grid_weights {
                    for &missing_ratio in &grid.grid_missing_ratios {
                        for &seed in &seeds {
                            cells.push(AblateCell {
                                alignment_mode,
                                gps_enabled,
                                fusion_mode,
                                weight_mode,
                                missing_ratio,
                                seed,
                            });
                        }
                    }
                }
            }
        }
    }
    cells
}

/// Generates the cell's data, fits, and scores the test split.
pub fn run_cell(cell: &AblateCell, synth: &SynthConfig, train: &TrainConfig, missing_modality: usize) -> Result<AblateRow> {
    let mut synth = synth.clone();
    synth.seed = cell.seed;
    synth.missing_ratio = vec![0.0; synth.num_modalities];
    *synth
        .missing_ratio
        .get_mut(missing_modality)
        .ok_or_else(|| config_err("grid_missing_modality is out of range"))? = cell.missing_ratio;
    synth.validate()?;
    let cfg = TrainConfig {
        alignment_mode: cell.alignment_mode,
        gps_enabled: cell.gps_enabled,
        fusion_mode: cell.fusion_mode,
        weight_mode: cell.weight_mode,
        seed: cell.seed,
        ..train.clone()
    };
    let (tr, va, te) = data::generate_splits(&synth)?;
    let outcome = fit(&tr, &va, &cfg)?;
    let scores = outcome.model.score_dataset(&te)?;
    let rep = metrics::report(&ScoredSet::new(scores, te.labels())?, cfg.f1_threshold, cfg.bootstrap_resamples, cfg.seed)?;
    Ok(AblateRow {
        alignment_mode: cell.alignment_mode,
        gps_enabled: cell.gps_enabled,
        fusion_mode: cell.fusion_mode,
        weight_mode: cell.weight_mode,
        missing_ratio: cell.missing_ratio,
        seed: cell.seed,
        status: "ok".into(),
        auroc: Some(rep.auroc),
        aupr: Some(rep.aupr),
        f1: Some(rep.f1),
        auroc_lo: Some(rep.ci.auroc.lo),
        auroc_hi: Some(rep.ci.auroc.hi),
        aupr_lo: Some(rep.ci.aupr.lo),
        aupr_hi: Some(rep.ci.aupr.hi),
        f1_lo: Some(rep.ci.f1.lo),
        f1_hi: Some(rep.ci.f1.hi),
        best_epoch: outcome.best_epoch,
        epochs_run: Some(outcome.history.len()),
        message: String::new(),
    })
}

fn failed_row(cell: &AblateCell, e: &DpmmError) -> AblateRow {
    AblateRow {
        alignment_mode: cell.alignment_mode,
        gps_enabled: cell.gps_enabled,
        fusion_mode: cell.fusion_mode,
        weight_mode: cell.weight_mode,
        missing_ratio: cell.missing_ratio,
        seed: cell.seed,
        status: "error".into(),
        auroc: None,
        aupr: None,
        f1: None,
        auroc_lo: None,
        auroc_hi: None,
        aupr_lo: None,
        aupr_hi: None,
        f1_lo: None,
        f1_hi: None,
        best_epoch: None,
        epochs_run: None,
        message: e.to_string(),
    }
}

/// Runs every cell (in parallel workers); failures become `error` rows and the grid continues.
pub fn run_grid(raw: &RawConfig) -> Result<Vec<AblateRow>> {
    let synth = raw.synth()?;
    let train = raw.train()?;
    let grid: AblateGrid = raw.section()?;
    let missing_modality = grid.grid_missing_modality.unwrap_or(synth.num_modalities - 1);
    if missing_modality >= synth.num_modalities {
        return Err(config_err("grid_missing_modality is out of range"));
    }
    let cells = grid_cells(&grid, raw.seed());
    let workers = match grid.grid_workers {
        0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        w => w,
    }
    .min(cells.len().max(1));
    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<AblateRow>>> = Mutex::new(vec![None; cells.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let row = run_cell(cell, &synth, &train, missing_modality).unwrap_or_else(|e| failed_row(cell, &e));
                rows.lock().expect("no worker panics while holding the lock")[i] = Some(row);
            });
        }
    });
    Ok(rows
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect())
}

pub fn cmd_ablate(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let started = Instant::now();
    let raw = RawConfig::read(config, seed)?;
    let rows = run_grid(&raw)?;
    fs::create_dir_all(out)?;
    let mut manifest = RunManifest::new("ablate", raw.seed(), Value::Object(raw.map.clone()), &[config]);
    manifest.wall_clock_seconds = Some(started.elapsed().as_secs_f64());
    write_csv(&out.join(RESULTS_FILE), &manifest, &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorRow {
    pub eta: f64,
    pub r: usize,
    pub mean: f64,
    pub se: f64,
    /// Exact prior mean under truncation (the last weight takes the remaining mass).
    pub analytic: f64,
}

/// Monte Carlo mean and standard error of each truncated weight for every `eta`.
pub fn prior_sim(etas: &[f64], mk: usize, draws: usize, seed: u64) -> Result<Vec<PriorRow>> {
    if draws < 1000 {
        return Err(config_err("prior simulation needs at least 1000 draws"));
    }
    if mk == 0 || etas.is_empty() {
        return Err(config_err("prior simulation needs MK ≥ 1 and at least one eta"));
    }
    let mut rows = Vec::with_capacity(etas.len() * mk);
    for (i, &eta) in etas.iter().enumerate() {
        let mut r = rng::substream(seed, Stream::Prior, i as u64);
        let mut sum = vec![0.0; mk];
        let mut sq = vec![0.0; mk];
        for _ in 0..draws {
            let w = sample_prior_weights_with(eta, mk, &mut r).map_err(config_err)?;
            for (j, v) in w.0.iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
        }
        let n = draws as f64;
        for j in 0..mk {
            let mean = sum[j] / n;
            let var = (sq[j] / n - mean * mean).max(0.0) * n / (n - 1.0);
            rows.push(PriorRow {
                eta,
                r: j + 1,
                mean,
                se: (var / n).sqrt(),
                analytic: if j + 1 == mk {
                    (eta / (1.0 + eta)).powi(mk as i32 - 1)
                } else {
                    prior_mean_weight(eta, j + 1)
                },
            });
        }
    }
    Ok(rows)
}

pub fn cmd_prior_sim(
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    etas: &[f64],
    mk: Option<usize>,
    draws: Option<usize>,
) -> Result<()> {
    let raw = match config {
        Some(p) => RawConfig::read(p, seed)?,
        None => RawConfig::from_value(Value::Object(Map::new()), seed)?,
    };
    let mut sim: PriorSimConfig = raw.section()?;
    if !etas.is_empty() {
        sim.prior_etas = etas.to_vec();
    }
    sim.prior_mk = mk.unwrap_or(sim.prior_mk);
    sim.prior_draws = draws.unwrap_or(sim.prior_draws);
    let rows = prior_sim(&sim.prior_etas, sim.prior_mk, sim.prior_draws, raw.seed())?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let inputs: Vec<&Path> = config.into_iter().collect();
    let manifest = RunManifest::new("prior-sim", raw.seed(), to_value(&sim), &inputs);
    write_csv(out, &manifest, &rows)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(c) => cmd_generate(&c.config, &c.out, c.seed),
        Command::Fit { common, data } => cmd_fit(&common.config, data, &common.out, common.seed),
        Command::Eval {
            checkpoint,
            data_file,
            out,
            seed,
        } => cmd_eval(checkpoint, data_file, out.as_deref(), *seed),
        Command::Ablate(c) => cmd_ablate(&c.config, &c.out, c.seed),
        Command::PriorSim {
            config,
            out,
            seed,
            etas,
            mk,
            draws,
        } => cmd_prior_sim(config.as_deref(), out, *seed, etas, *mk, *draws),
    }
}

/// Parses arguments, runs the command, reports errors on stderr and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dpmm: {e}");
            exit_code(&e)
        }
    }
}
