//! Synthetic clustered multimodal data, MAR masking, splitting, and JSONL persistence.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, DpmmError, Result};
use crate::grad::sigmoid;
use crate::rng::{self, Stream};

/// Counter offset for the fixed loading matrices and label weights, far past any sample index.
const FIXED_DRAWS: u64 = 1 << 40;

/// Largest absolute cluster logit for the label model.
const LABEL_LOGIT_SCALE: f64 = 4.0;

/// One multimodal observation; a missing modality has `features[m] == None` and `mask[m] == false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimodalSample {
    pub features: Vec<Option<Vec<f64>>>,
    pub label: u8,
    pub mask: Vec<bool>,
}

impl MultimodalSample {
    pub fn num_observed(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn validate(&self, dims: Option<&[usize]>) -> Result<()> {
        if self.features.len() != self.mask.len() {
            return Err(DpmmError::InvalidSample("features and mask lengths differ".into()));
        }
        if self.label > 1 {
            return Err(DpmmError::InvalidSample(format!("label {} is not 0 or 1", self.label)));
        }
        if self.num_observed() == 0 {
            return Err(DpmmError::InvalidSample("no observed modality".into()));
        }
        for (m, (f, seen)) in self.features.iter().zip(&self.mask).enumerate() {
            match (f, seen) {
                (Some(x), true) => {
                    if let Some(d) = dims {
                        if d.get(m) != Some(&x.len()) {
                            return Err(DpmmError::InvalidSample(format!(
                                "modality {m} has {} features, expected {:?}",
                                x.len(),
                                d.get(m)
                            )));
                        }
                    }
                }
                (None, false) => {}
                _ => {
                    return Err(DpmmError::InvalidSample(format!(
                        "modality {m}: mask disagrees with feature presence"
                    )))
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<MultimodalSample>,
}

impl Dataset {
    pub fn new(samples: Vec<MultimodalSample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_modalities(&self) -> Option<usize> {
        self.samples.first().map(|s| s.mask.len())
    }

    /// Per-modality input dimension, read from the first sample where each modality is observed.
    pub fn input_dims(&self) -> Option<Vec<usize>> {
        let m = self.num_modalities()?;
        (0..m)
            .map(|j| self.samples.iter().find_map(|s| s.features[j].as_ref().map(|x| x.len())))
            .collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

fn default_split() -> Vec<f64> {
    vec![0.7, 0.1, 0.2]
}

/// Generator settings; field names are the config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_modalities: usize,
    pub clusters: usize,
    pub input_dims: Vec<usize>,
    /// Euclidean distance between any two cluster means, per modality.
    pub separation: f64,
    /// Standard deviation of the isotropic feature noise.
    pub noise: f64,
    pub label_noise: f64,
    /// Total samples before splitting.
    pub n: usize,
    #[serde(default = "default_split")]
    pub split_fractions: Vec<f64>,
    /// Per-modality MAR missing ratio; empty means fully observed.
    #[serde(default)]
    pub missing_ratio: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_modalities: 2,
            clusters: 3,
            input_dims: vec![20, 30],
            separation: 4.0,
            noise: 1.0,
            label_noise: 0.05,
            n: 2000,
            split_fractions: default_split(),
            missing_ratio: vec![0.0, 0.0],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_modalities == 0 {
            return Err(DpmmError::Config("num_modalities must be at least 1".into()));
        }
        if self.clusters < 2 {
            return Err(DpmmError::Config("clusters must be at least 2".into()));
        }
        if self.input_dims.len() != self.num_modalities || self.input_dims.contains(&0) {
            return Err(DpmmError::Config(format!(
                "input_dims must list {} positive dimensions",
                self.num_modalities
            )));
        }
        if !(self.separation >= 0.0 && self.noise >= 0.0) {
            return Err(DpmmError::Config("separation and noise must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(DpmmError::Config("label_noise must lie in [0, 1]".into()));
        }
        if !self.missing_ratio.is_empty() && self.missing_ratio.len() != self.num_modalities {
            return Err(DpmmError::Config("missing_ratio needs one entry per modality".into()));
        }
        if self.missing_ratio.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(DpmmError::Config("missing_ratio entries must lie in [0, 1)".into()));
        }
        validate_fractions(&self.split_fractions).map_err(|e| DpmmError::Config(e.to_string()))
    }
}

/// Ground-truth generative parameters shared by every sample of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorTruth {
    /// `loadings[m][c]` is the mean of cluster `c` in modality `m`.
    pub cluster_means: Vec<Vec<Vec<f64>>>,
    pub cluster_logits: Vec<f64>,
}

/// Cluster means as scaled orthonormal directions, so every pair sits at distance `separation`.
pub fn generator_truth(cfg: &SynthConfig) -> GeneratorTruth {
    let cluster_means = (0..cfg.num_modalities)
        .map(|m| {
            let mut r = rng::substream(cfg.seed, Stream::Data, FIXED_DRAWS + m as u64);
            let dirs = orthonormal_columns(cfg.input_dims[m], cfg.clusters, &mut r);
            dirs.into_iter()
                .map(|d| d.into_iter().map(|v| v * cfg.separation / 2f64.sqrt()).collect())
                .collect()
        })
        .collect();
    let mut r = rng::substream(cfg.seed, Stream::Data, FIXED_DRAWS - 1);
    let c = cfg.clusters;
    let mut cluster_logits: Vec<f64> = (0..c)
        .map(|i| LABEL_LOGIT_SCALE * (2.0 * i as f64 / (c - 1) as f64 - 1.0))
        .collect();
    cluster_logits.shuffle(&mut r);
    GeneratorTruth {
        cluster_means,
        cluster_logits,
    }
}

/// Gram–Schmidt on Gaussian columns; when `count > dim` the surplus columns are only normalized.
fn orthonormal_columns(dim: usize, count: usize, r: &mut rng::Rng) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut v: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
        if cols.len() < dim {
            for u in &cols {
                let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= proj * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
        v.iter_mut().for_each(|a| *a /= norm);
        cols.push(v);
    }
    cols
}

/// Draws `cfg.n` fully observed samples. Sample `i` uses its own counter stream,
/// so the output does not depend on generation order.
pub fn generate(cfg: &SynthConfig) -> Result<(Dataset, Vec<usize>)> {
    cfg.validate().map_err(|e| invalid(e.to_string()))?;
    let truth = generator_truth(cfg);
    let mut samples = Vec::with_capacity(cfg.n);
    let mut clusters = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let mut r = rng::substream(cfg.seed, Stream::Data, i as u64);
        let c = r.random_range(0..cfg.clusters);
        let features = (0..cfg.num_modalities)
            .map(|m| {
                Some(
                    truth.cluster_means[m][c]
                        .iter()
                        .map(|mu| mu + cfg.noise * r.sample::<f64, _>(StandardNormal))
                        .collect(),
                )
            })
            .collect();
        let mut label = u8::from(r.random::<f64>() < sigmoid(truth.cluster_logits[c]));
        if r.random::<f64>() < cfg.label_noise {
            label = 1 - label;
        }
        samples.push(MultimodalSample {
            features,
            label,
            mask: vec![true; cfg.num_modalities],
        });
        clusters.push(c);
    }
    Ok((Dataset::new(samples), clusters))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskReport {
    pub masked: usize,
    /// Chosen samples left untouched because modality `m` was their last observed one.
    pub skipped: usize,
}

/// Masks modality `m` on `⌊p·n⌋` uniformly chosen samples, independent of features and labels.
pub fn apply_mar_mask(dataset: &Dataset, m: usize, p: f64, seed: u64) -> Result<(Dataset, MaskReport)> {
    if !(0.0..1.0).contains(&p) {
        return Err(invalid(format!("missing ratio must lie in [0, 1), got {p}")));
    }
    if let Some(mm) = dataset.num_modalities() {
        if m >= mm {
            return Err(invalid(format!("modality {m} out of range 0..{mm}")));
        }
    }
    let n = dataset.len();
    let count = (p * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::substream(seed, Stream::Mask, m as u64);
    order.shuffle(&mut r);
    let mut out = dataset.clone();
    let mut report = MaskReport { masked: 0, skipped: 0 };
    for &i in &order[..count] {
        let s = &mut out.samples[i];
        if !s.mask[m] {
            continue;
        }
        if s.num_observed() == 1 {
            report.skipped += 1;
            continue;
        }
        s.mask[m] = false;
        s.features[m] = None;
        report.masked += 1;
    }
    Ok((out, report))
}

fn validate_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.len() != 3 || fractions.iter().any(|f| !(*f >= 0.0)) {
        return Err(invalid("split fractions must be three nonnegative numbers"));
    }
    if fractions[0] <= 0.0 || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid("split fractions must sum to 1 with a nonempty training share"));
    }
    Ok(())
}

/// Seeded shuffle into disjoint, exhaustive train / valid / test parts.
pub fn split(dataset: &Dataset, fractions: &[f64], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    validate_fractions(fractions)?;
    let n = dataset.len();
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_valid = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, Stream::Split));
    let take = |idx: &[usize]| Dataset::new(idx.iter().map(|&i| dataset.samples[i].clone()).collect());
    Ok((
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_valid]),
        take(&order[n_train + n_valid..]),
    ))
}

/// Seed for the MAR mask of modality `m`, distinct per modality.
pub fn mask_seed(seed: u64, m: usize) -> u64 {
    seed ^ ((m as u64 + 1) << 32)
}

/// Full generation pipeline: samples, per-modality MAR masks, split.
pub fn generate_splits(cfg: &SynthConfig) -> Result<(Dataset, Dataset, Dataset)> {
    let (mut data, _) = generate(cfg)?;
    for (m, p) in cfg.missing_ratio.iter().enumerate() {
        if *p > 0.0 {
            data = apply_mar_mask(&data, m, *p, mask_seed(cfg.seed, m))?.0;
        }
    }
    split(&data, &cfg.split_fractions, cfg.seed)
}

/// One JSON object per line.
pub fn save(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in &dataset.samples {
        serde_json::to_writer(&mut w, s).map_err(|e| invalid(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    let mut dims: Option<Vec<Option<usize>>> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| DpmmError::Parse { line: i + 1, message };
        let s: MultimodalSample = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        s.validate(None).map_err(|e| parse_err(e.to_string()))?;
        let seen = dims.get_or_insert_with(|| vec![None; s.mask.len()]);
        if seen.len() != s.mask.len() {
            return Err(parse_err(format!("expected {} modalities, found {}", seen.len(), s.mask.len())));
        }
        for (m, f) in s.features.iter().enumerate() {
            if let Some(x) = f {
                match seen[m] {
                    Some(d) if d != x.len() => {
                        return Err(parse_err(format!("modality {m} has {} features, expected {d}", x.len())))
                    }
                    _ => seen[m] = Some(x.len()),
                }
            }
        }
        samples.push(s);
    }
    Ok(Dataset::new(samples))
}
