//! End-to-end network: per-modality encoders, fusion head, mixture-based
//! imputation of missing modalities, and the training loop.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MultimodalSample};
use crate::error::{check_dim, invalid, DpmmError, Result};
use crate::grad::{gumbel_noise, standard_normal, ParamId, ParamStore, ParamTensor, Tape, Var};
use crate::metrics::{auroc, ScoredSet};
use crate::mixture::{self, ComponentBank, MixtureState, Responsibilities};
use crate::rng::{self, Rng, Stream};
use crate::stick::{kl_sticks, mean_weights, StickState};
use crate::math::DiagGaussian;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Added to per-batch variances before taking logs in the moment-matching alignment.
const MOMENT_VAR_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Concat,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentMode {
    Dp,
    Cosine,
    Kl,
    None,
}

/// How the mixture weights are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// Stick-breaking factors updated by natural-gradient steps.
    Dp,
    /// Free softmax logits over all `M·K` components, trained by gradient.
    Learnable,
}

/// Training settings; field names are the config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub eta: f64,
    #[serde(rename = "K")]
    pub truncation: usize,
    pub lambda_dp: f64,
    pub tau: f64,
    pub learning_rate: f64,
    /// Step size for the mixture means, log-variances and weight logits; `None` uses `learning_rate`.
    pub mixture_learning_rate: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub gamma_step: f64,
    pub seed: u64,
    pub fusion_mode: FusionMode,
    pub gps_enabled: bool,
    pub gps_hard: bool,
    pub gps_draws: usize,
    pub alignment_mode: AlignmentMode,
    pub weight_mode: WeightMode,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    /// Standard deviation of the seeded jitter added to the zero-initialized component means.
    pub mu_init_jitter: f64,
    /// Weight of a `½‖μ‖²` penalty on the component means.
    pub mu_prior_weight: f64,
    pub f1_threshold: f64,
    pub bootstrap_resamples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            truncation: 4,
            lambda_dp: 1e-5,
            tau: 0.01,
            learning_rate: 1e-4,
            mixture_learning_rate: None,
            batch_size: 32,
            epochs: 100,
            early_stop_patience: 15,
            gamma_step: 0.05,
            seed: 0,
            fusion_mode: FusionMode::Concat,
            gps_enabled: true,
            gps_hard: true,
            gps_draws: 1,
            alignment_mode: AlignmentMode::Dp,
            weight_mode: WeightMode::Dp,
            latent_dim: 8,
            hidden_dim: 32,
            mu_init_jitter: 0.1,
            mu_prior_weight: 0.0,
            f1_threshold: 0.5,
            bootstrap_resamples: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(DpmmError::Config(msg.to_string()));
        if !(self.eta > 0.0) {
            return bad("eta must be positive");
        }
        if self.truncation == 0 {
            return bad("K must be at least 1");
        }
        if !(self.lambda_dp >= 0.0) {
            return bad("lambda_dp must be nonnegative");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.learning_rate >= 0.0) || self.mixture_learning_rate.is_some_and(|lr| !(lr >= 0.0)) {
            return bad("learning rates must be nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.gamma_step) {
            return bad("gamma_step must lie in [0, 1]");
        }
        if self.gps_draws == 0 {
            return bad("gps_draws must be at least 1");
        }
        if self.latent_dim == 0 || self.hidden_dim == 0 {
            return bad("latent_dim and hidden_dim must be positive");
        }
        if !(self.mu_init_jitter >= 0.0 && self.mu_prior_weight >= 0.0) {
            return bad("mu_init_jitter and mu_prior_weight must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.f1_threshold) {
            return bad("f1_threshold must lie in [0, 1]");
        }
        if self.bootstrap_resamples < crate::metrics::MIN_RESAMPLES {
            return bad(&format!("bootstrap_resamples must be at least {}", crate::metrics::MIN_RESAMPLES));
        }
        Ok(())
    }
}

/// Parameter handles of one modality encoder: dense → tanh → dense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub encoders: Vec<EncoderIds>,
    pub head_w: ParamId,
    pub head_b: ParamId,
    /// `[M·K, d]` component means in linear stick order.
    pub mu: ParamId,
    pub log_var: ParamId,
    pub weight_logits: Option<ParamId>,
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub steps: u64,
}

impl AdamState {
    fn for_store(store: &ParamStore) -> Self {
        Self {
            first: store.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: store.iter().map(|p| vec![0.0; p.len()]).collect(),
            steps: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub task: f64,
    /// Alignment regularizer before scaling by `lambda_dp` (the DP loss in `dp` mode).
    pub dp: f64,
    pub kl_sticks: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub loss: f64,
    pub components: LossComponents,
}

/// Full model state; exclusively owned by the training loop.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: TrainConfig,
    pub input_dims: Vec<usize>,
    pub params: ParamStore,
    pub layout: ParamLayout,
    pub sticks: StickState,
    pub n_total: usize,
    pub optimizer: AdamState,
    train_rng: Rng,
}

/// Tape handles for every parameter, registered once per forward pass.
struct ParamVars {
    encoders: Vec<[Var; 4]>,
    head_w: Var,
    head_b: Var,
    mu: Vec<Var>,
    log_var: Vec<Var>,
    mu_all: Var,
    /// Log of the global weights, `M·K` entries.
    log_pi: Var,
    /// Renormalized log weights of each modality, `K` entries each.
    modality_logits: Vec<Var>,
}

struct BatchGraph {
    embeddings: Vec<Vec<Var>>,
    observed: Vec<Vec<bool>>,
    logits: Vec<Var>,
}

struct LossGraph {
    total: Var,
    task: Var,
    align: Option<Var>,
    batch: BatchGraph,
}

fn glorot(rows: usize, cols: usize, r: &mut Rng) -> Vec<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| r.random_range(-a..a)).collect()
}

impl Model {
    /// Fresh model: Glorot encoders and head, component means at zero plus seeded
    /// jitter, unit variances, sticks at the `Beta(1, η)` prior.
    pub fn new(input_dims: &[usize], config: TrainConfig, n_total: usize) -> Result<Self> {
        config.validate()?;
        if input_dims.is_empty() || input_dims.contains(&0) {
            return Err(invalid("every modality needs a positive input dimension"));
        }
        let m_count = input_dims.len();
        let (h, d, k) = (config.hidden_dim, config.latent_dim, config.truncation);
        let mut r = rng::stream(config.seed, Stream::Init);
        let mut store = ParamStore::new();
        let add = |store: &mut ParamStore, name: String, shape: Vec<usize>, values: Vec<f64>| {
            store.add(ParamTensor::new(name, shape, values).expect("consistent shape"))
        };
        let mut encoders = Vec::with_capacity(m_count);
        for (m, &din) in input_dims.iter().enumerate() {
            let w1 = add(&mut store, format!("encoder{m}.w1"), vec![h, din], glorot(h, din, &mut r));
            let b1 = add(&mut store, format!("encoder{m}.b1"), vec![h], vec![0.0; h]);
            let w2 = add(&mut store, format!("encoder{m}.w2"), vec![d, h], glorot(d, h, &mut r));
            let b2 = add(&mut store, format!("encoder{m}.b2"), vec![d], vec![0.0; d]);
            encoders.push(EncoderIds { w1, b1, w2, b2 });
        }
        let fused = match config.fusion_mode {
            FusionMode::Concat => m_count * d,
            FusionMode::Sum => d,
        };
        let head_w = add(&mut store, "head.w".into(), vec![1, fused], glorot(1, fused, &mut r));
        let head_b = add(&mut store, "head.b".into(), vec![1], vec![0.0]);
        let mk = m_count * k;
        let jitter = config.mu_init_jitter;
        let mu_init: Vec<f64> = standard_normal(mk * d, &mut r).into_iter().map(|e| jitter * e).collect();
        let mu = add(&mut store, "mixture.mu".into(), vec![mk, d], mu_init);
        let log_var = add(&mut store, "mixture.log_var".into(), vec![mk, d], vec![0.0; mk * d]);
        let weight_logits = match config.weight_mode {
            WeightMode::Dp => None,
            WeightMode::Learnable => Some(add(&mut store, "mixture.weight_logits".into(), vec![mk], vec![0.0; mk])),
        };
        let sticks = StickState::prior(config.eta, m_count, k)?;
        let optimizer = AdamState::for_store(&store);
        let train_rng = rng::stream(config.seed, Stream::Gumbel);
        Ok(Self {
            layout: ParamLayout {
                encoders,
                head_w,
                head_b,
                mu,
                log_var,
                weight_logits,
            },
            input_dims: input_dims.to_vec(),
            params: store,
            sticks,
            n_total,
            optimizer,
            train_rng,
            config,
        })
    }

    /// Rebuilds a model from stored parameters (optimizer moments reset).
    pub fn from_parts(
        config: TrainConfig,
        input_dims: Vec<usize>,
        params: ParamStore,
        sticks: StickState,
        n_total: usize,
    ) -> Result<Self> {
        let template = Model::new(&input_dims, config.clone(), n_total)?;
        if template.params.len() != params.len() {
            return Err(DpmmError::SchemaMismatch(format!(
                "expected {} parameter tensors, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for (a, b) in template.params.iter().zip(params.iter()) {
            if a.name != b.name || a.shape != b.shape {
                return Err(DpmmError::SchemaMismatch(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    b.name, b.shape, a.name, a.shape
                )));
            }
        }
        if sticks.num_modalities != input_dims.len() || sticks.truncation != config.truncation {
            return Err(DpmmError::SchemaMismatch("stick layout does not match the model".into()));
        }
        Ok(Self {
            optimizer: AdamState::for_store(&params),
            params,
            sticks,
            ..template
        })
    }

    pub fn num_modalities(&self) -> usize {
        self.input_dims.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Snapshot of the mixture as a library-level state.
    pub fn mixture_state(&self) -> MixtureState {
        let d = self.config.latent_dim;
        let mu = &self.params.get(self.layout.mu).values;
        let lv = &self.params.get(self.layout.log_var).values;
        let comps = mu
            .chunks(d)
            .zip(lv.chunks(d))
            .map(|(m, l)| DiagGaussian { mu: m.to_vec(), log_var: l.to_vec() })
            .collect();
        MixtureState {
            sticks: self.sticks.clone(),
            bank: ComponentBank {
                components: comps,
                num_modalities: self.num_modalities(),
                truncation: self.config.truncation,
                dim: d,
            },
            lambda_dp: self.config.lambda_dp,
            n_total: self.n_total,
        }
    }

    /// Global mixture weights currently in force.
    pub fn weights(&self) -> Vec<f64> {
        match self.layout.weight_logits {
            None => mean_weights(&self.sticks).0,
            Some(id) => {
                let l = &self.params.get(id).values;
                let lse = crate::math::log_sum_exp(l).expect("nonempty logits");
                l.iter().map(|v| (v - lse).exp()).collect()
            }
        }
    }

    fn register(&self, tape: &mut Tape) -> Result<ParamVars> {
        let s = &self.params;
        let encoders = self
            .layout
            .encoders
            .iter()
            .map(|e| [tape.param(s, e.w1), tape.param(s, e.b1), tape.param(s, e.w2), tape.param(s, e.b2)])
            .collect();
        let head_w = tape.param(s, self.layout.head_w);
        let head_b = tape.param(s, self.layout.head_b);
        let d = self.config.latent_dim;
        let (m_count, k) = (self.num_modalities(), self.config.truncation);
        let mu_all = tape.param(s, self.layout.mu);
        let lv_all = tape.param(s, self.layout.log_var);
        let mut mu = Vec::with_capacity(m_count * k);
        let mut log_var = Vec::with_capacity(m_count * k);
        for r in 0..m_count * k {
            mu.push(tape.slice(mu_all, r * d, d)?);
            log_var.push(tape.slice(lv_all, r * d, d)?);
        }
        let (log_pi, modality_logits) = match self.layout.weight_logits {
            None => {
                let pi = mean_weights(&self.sticks);
                let log_pi = tape.input(pi.0.iter().map(|p| p.ln()).collect());
                let per_mod = (0..m_count)
                    .map(|m| {
                        let w = mixture::within_modality_weights(&pi, m, m_count, k)?;
                        Ok(tape.input(w.iter().map(|v| v.ln()).collect()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                (log_pi, per_mod)
            }
            Some(id) => {
                let logits = tape.param(s, id);
                let log_pi = tape.log_softmax(logits)?;
                let per_mod = (0..m_count)
                    .map(|m| {
                        let parts = (0..k)
                            .map(|kk| tape.slice(log_pi, kk * m_count + m, 1))
                            .collect::<Result<Vec<_>>>()?;
                        let gathered = tape.concat(&parts);
                        tape.log_softmax(gathered)
                    })
                    .collect::<Result<Vec<_>>>()?;
                (log_pi, per_mod)
            }
        };
        Ok(ParamVars {
            encoders,
            head_w,
            head_b,
            mu,
            log_var,
            mu_all,
            log_pi,
            modality_logits,
        })
    }

    fn encode_on(&self, tape: &mut Tape, pv: &ParamVars, x: &[f64], m: usize) -> Result<Var> {
        check_dim(self.input_dims[m], x.len())?;
        let [w1, b1, w2, b2] = pv.encoders[m];
        let xin = tape.input(x.to_vec());
        let h = tape.dense(xin, w1, b1)?;
        let h = tape.tanh(h);
        tape.dense(h, w2, b2)
    }

    /// Differentiable draw from the modality-`m` marginal, averaged over `gps_draws`.
    fn impute_on(&self, tape: &mut Tape, pv: &ParamVars, m: usize, r: &mut Rng) -> Result<Var> {
        let (k, d) = (self.config.truncation, self.config.latent_dim);
        let mut draws = Vec::with_capacity(self.config.gps_draws);
        for _ in 0..self.config.gps_draws {
            let noise = gumbel_noise(k, r);
            let sel = tape.gumbel_softmax(pv.modality_logits[m], &noise, self.config.tau, self.config.gps_hard)?;
            let mut items = Vec::with_capacity(k);
            for kk in 0..k {
                let pos = kk * self.num_modalities() + m;
                let eps = standard_normal(d, r);
                items.push(tape.reparam(pv.mu[pos], pv.log_var[pos], eps)?);
            }
            draws.push(tape.weighted_sum(sel, &items)?);
        }
        if draws.len() == 1 {
            return Ok(draws[0]);
        }
        let total = tape.sum_many(&draws)?;
        Ok(tape.scale(total, 1.0 / draws.len() as f64))
    }

    fn embeddings_on(&self, tape: &mut Tape, pv: &ParamVars, sample: &MultimodalSample, r: &mut Rng) -> Result<(Vec<Var>, Vec<bool>)> {
        self.check_schema(sample)?;
        sample.validate(Some(&self.input_dims))?;
        let mut out = Vec::with_capacity(self.num_modalities());
        for m in 0..self.num_modalities() {
            let z = match &sample.features[m] {
                Some(x) => self.encode_on(tape, pv, x, m)?,
                None if self.config.gps_enabled => self.impute_on(tape, pv, m, r)?,
                None => tape.input(vec![0.0; self.config.latent_dim]),
            };
            out.push(z);
        }
        Ok((out, sample.mask.clone()))
    }

    /// Rejects samples whose modality count or feature lengths disagree with the model.
    pub fn check_schema(&self, sample: &MultimodalSample) -> Result<()> {
        if sample.features.len() != self.num_modalities() {
            return Err(DpmmError::SchemaMismatch(format!(
                "sample has {} modalities, model expects {}",
                sample.features.len(),
                self.num_modalities()
            )));
        }
        for (m, f) in sample.features.iter().enumerate() {
            if let Some(x) = f {
                if x.len() != self.input_dims[m] {
                    return Err(DpmmError::SchemaMismatch(format!(
                        "modality {m} has {} features, model expects {}",
                        x.len(),
                        self.input_dims[m]
                    )));
                }
            }
        }
        Ok(())
    }

    fn head_on(&self, tape: &mut Tape, pv: &ParamVars, embeddings: &[Var]) -> Result<Var> {
        let fused = match self.config.fusion_mode {
            FusionMode::Concat => tape.concat(embeddings),
            FusionMode::Sum => tape.sum_many(embeddings)?,
        };
        tape.dense(fused, pv.head_w, pv.head_b)
    }

    fn batch_on(&self, tape: &mut Tape, pv: &ParamVars, batch: &[&MultimodalSample], r: &mut Rng) -> Result<BatchGraph> {
        let mut g = BatchGraph {
            embeddings: Vec::with_capacity(batch.len()),
            observed: Vec::with_capacity(batch.len()),
            logits: Vec::with_capacity(batch.len()),
        };
        for s in batch {
            let (z, obs) = self.embeddings_on(tape, pv, s, r)?;
            g.logits.push(self.head_on(tape, pv, &z)?);
            g.embeddings.push(z);
            g.observed.push(obs);
        }
        Ok(g)
    }

    /// Negative mean joint log density of observed embeddings, plus stick KL / n.
    fn dp_term(&self, tape: &mut Tape, pv: &ParamVars, g: &BatchGraph) -> Result<Var> {
        let mut lses = Vec::new();
        for (zs, obs) in g.embeddings.iter().zip(&g.observed) {
            for (z, seen) in zs.iter().zip(obs) {
                if !seen {
                    continue;
                }
                let lls: Vec<Var> = pv
                    .mu
                    .iter()
                    .zip(&pv.log_var)
                    .map(|(mu, lv)| tape.gauss_log_pdf(*z, *mu, *lv))
                    .collect::<Result<_>>()?;
                let lls = tape.concat(&lls);
                let terms = tape.add(lls, pv.log_pi)?;
                lses.push(tape.log_sum_exp(terms)?);
            }
        }
        let kl = match self.layout.weight_logits {
            None if self.n_total > 0 => kl_sticks(&self.sticks) / self.n_total as f64,
            _ => 0.0,
        };
        let mut term = if lses.is_empty() {
            tape.input(vec![kl])
        } else {
            let s = tape.sum_many(&lses)?;
            let s = tape.scale(s, -1.0 / g.logits.len() as f64);
            tape.add_const(s, vec![kl])?
        };
        if self.config.mu_prior_weight > 0.0 {
            let sq = tape.mul(pv.mu_all, pv.mu_all)?;
            let sq = tape.sum(sq);
            let pen = tape.scale(sq, 0.5 * self.config.mu_prior_weight);
            term = tape.add(term, pen)?;
        }
        Ok(term)
    }

    /// Mean pairwise `1 − cos` between observed embeddings of the same sample.
    fn cosine_term(&self, tape: &mut Tape, g: &BatchGraph) -> Result<Option<Var>> {
        let mut per_sample = Vec::new();
        for (zs, obs) in g.embeddings.iter().zip(&g.observed) {
            let seen: Vec<Var> = zs.iter().zip(obs).filter(|(_, o)| **o).map(|(z, _)| *z).collect();
            if seen.len() < 2 {
                continue;
            }
            let mut cos = Vec::new();
            for a in 0..seen.len() {
                for b in a + 1..seen.len() {
                    cos.push(tape.cosine(seen[a], seen[b])?);
                }
            }
            let n = cos.len() as f64;
            let total = tape.sum_many(&cos)?;
            let mean = tape.scale(total, -1.0 / n);
            per_sample.push(tape.add_const(mean, vec![1.0])?);
        }
        if per_sample.is_empty() {
            return Ok(None);
        }
        let n = per_sample.len() as f64;
        let total = tape.sum_many(&per_sample)?;
        Ok(Some(tape.scale(total, 1.0 / n)))
    }

    /// Symmetric KL between diagonal Gaussians fitted to each modality's batch embeddings.
    fn moment_kl_term(&self, tape: &mut Tape, g: &BatchGraph) -> Result<Option<Var>> {
        let mut stats = Vec::new();
        for m in 0..self.num_modalities() {
            let zs: Vec<Var> = g
                .embeddings
                .iter()
                .zip(&g.observed)
                .filter(|(_, o)| o[m])
                .map(|(z, _)| z[m])
                .collect();
            if zs.len() < 2 {
                continue;
            }
            let inv = 1.0 / zs.len() as f64;
            let total = tape.sum_many(&zs)?;
            let mean = tape.scale(total, inv);
            let mut sq = Vec::with_capacity(zs.len());
            for z in &zs {
                let c = tape.sub(*z, mean)?;
                sq.push(tape.mul(c, c)?);
            }
            let var = tape.sum_many(&sq)?;
            let var = tape.scale(var, inv);
            let var = tape.add_const(var, vec![MOMENT_VAR_EPS; self.config.latent_dim])?;
            stats.push((mean, tape.log(var)));
        }
        if stats.len() < 2 {
            return Ok(None);
        }
        let mut kls = Vec::new();
        for a in 0..stats.len() {
            for b in a + 1..stats.len() {
                let (ma, la) = stats[a];
                let (mb, lb) = stats[b];
                let fwd = tape.kl_diag(ma, la, mb, lb)?;
                let bwd = tape.kl_diag(mb, lb, ma, la)?;
                kls.push(tape.add(fwd, bwd)?);
            }
        }
        let n = kls.len() as f64;
        let total = tape.sum_many(&kls)?;
        Ok(Some(tape.scale(total, 1.0 / n)))
    }

    fn loss_on(&self, tape: &mut Tape, batch: &[&MultimodalSample], r: &mut Rng) -> Result<LossGraph> {
        if batch.is_empty() {
            return Err(invalid("empty batch"));
        }
        let pv = self.register(tape)?;
        let g = self.batch_on(tape, &pv, batch, r)?;
        let bces = g
            .logits
            .iter()
            .zip(batch)
            .map(|(l, s)| tape.bce_with_logit(*l, f64::from(s.label)))
            .collect::<Result<Vec<_>>>()?;
        let task = tape.sum_many(&bces)?;
        let task = tape.scale(task, 1.0 / batch.len() as f64);
        let align = match self.config.alignment_mode {
            AlignmentMode::Dp => Some(self.dp_term(tape, &pv, &g)?),
            AlignmentMode::Cosine => self.cosine_term(tape, &g)?,
            AlignmentMode::Kl => self.moment_kl_term(tape, &g)?,
            AlignmentMode::None => None,
        };
        let total = match align {
            Some(a) if self.config.lambda_dp > 0.0 => {
                let scaled = tape.scale(a, self.config.lambda_dp);
                tape.add(task, scaled)?
            }
            _ => task,
        };
        Ok(LossGraph { total, task, align, batch: g })
    }

    /// Deterministic latent embedding of one observed modality.
    pub fn encode(&self, x: &[f64], m: usize) -> Result<Vec<f64>> {
        if m >= self.num_modalities() {
            return Err(invalid(format!("modality {m} out of range")));
        }
        let mut tape = Tape::new();
        let pv = self.register(&mut tape)?;
        let z = self.encode_on(&mut tape, &pv, x, m)?;
        Ok(tape.value(z).to_vec())
    }

    /// Embeddings for every modality: encoder outputs where observed; mixture
    /// draws (or zeros when imputation is disabled) where missing.
    pub fn assemble_embeddings(&self, sample: &MultimodalSample, r: &mut Rng) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
        let mut tape = Tape::new();
        let pv = self.register(&mut tape)?;
        let (zs, obs) = self.embeddings_on(&mut tape, &pv, sample, r)?;
        Ok((zs.iter().map(|z| tape.value(*z).to_vec()).collect(), obs))
    }

    /// Fusion and classifier on precomputed embeddings.
    pub fn predict(&self, embeddings: &[Vec<f64>]) -> Result<f64> {
        check_dim(self.num_modalities(), embeddings.len())?;
        let mut tape = Tape::new();
        let pv = self.register(&mut tape)?;
        let zs = embeddings
            .iter()
            .map(|z| {
                check_dim(self.config.latent_dim, z.len())?;
                Ok(tape.input(z.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let logit = self.head_on(&mut tape, &pv, &zs)?;
        Ok(crate::grad::sigmoid(tape.scalar(logit)))
    }

    /// Scores every sample, drawing imputations from `r` in sample order.
    pub fn predict_samples(&self, samples: &[MultimodalSample], r: &mut Rng) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let pv = self.register(&mut tape)?;
        let base = tape.len();
        let mut scores = Vec::with_capacity(samples.len());
        for s in samples {
            let (zs, _) = self.embeddings_on(&mut tape, &pv, s, r)?;
            let logit = self.head_on(&mut tape, &pv, &zs)?;
            scores.push(crate::grad::sigmoid(tape.scalar(logit)));
            tape.truncate(base);
        }
        Ok(scores)
    }

    /// Scores with the evaluation stream re-seeded, so identical parameters give identical scores.
    pub fn score_dataset(&self, data: &Dataset) -> Result<Vec<f64>> {
        let mut r = rng::stream(self.config.seed, Stream::Eval);
        self.predict_samples(&data.samples, &mut r)
    }

    pub fn evaluate_auroc(&self, data: &Dataset) -> Result<f64> {
        let scores = self.score_dataset(data)?;
        auroc(&ScoredSet::new(scores, data.labels())?)
    }

    /// Total loss and its parts on one batch, using `r` for imputation draws.
    pub fn loss_total(&self, batch: &[&MultimodalSample], r: &mut Rng) -> Result<(f64, LossComponents)> {
        let mut tape = Tape::new();
        let lg = self.loss_on(&mut tape, batch, r)?;
        Ok((tape.scalar(lg.total), self.components_of(&tape, &lg)))
    }

    fn components_of(&self, tape: &Tape, lg: &LossGraph) -> LossComponents {
        LossComponents {
            task: tape.scalar(lg.task),
            dp: lg.align.map(|a| tape.scalar(a)).unwrap_or(0.0),
            kl_sticks: kl_sticks(&self.sticks),
        }
    }

    /// Flat parameter gradient of the total loss on `batch` with frozen imputation noise.
    pub fn loss_gradient(&mut self, batch: &[&MultimodalSample], r: &mut Rng) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let lg = self.loss_on(&mut tape, batch, r)?;
        self.params.zero_grad();
        tape.backward(lg.total, &mut self.params)?;
        Ok((tape.scalar(lg.total), self.params.flat_grads()))
    }

    /// One optimization step: forward with imputation, backward, moment-adapted
    /// parameter update, then the stochastic stick update from the batch's
    /// observed embeddings.
    pub fn train_step(&mut self, batch: &[&MultimodalSample]) -> Result<StepMetrics> {
        let mut tape = Tape::new();
        let mut r = self.train_rng.clone();
        let lg = self.loss_on(&mut tape, batch, &mut r)?;
        self.train_rng = r;
        let components = self.components_of(&tape, &lg);
        let loss = tape.scalar(lg.total);
        for (name, v) in [("task", components.task), ("alignment", components.dp), ("total", loss)] {
            if !v.is_finite() {
                return Err(DpmmError::Divergence {
                    component: name.into(),
                    epoch: 0,
                    step: self.optimizer.steps as usize,
                });
            }
        }
        self.params.zero_grad();
        tape.backward(lg.total, &mut self.params)?;
        self.adam_update();
        let diverged = |component: &str, steps: u64| DpmmError::Divergence {
            component: component.into(),
            epoch: 0,
            step: steps as usize - 1,
        };
        if self.params.iter().any(|p| p.values.iter().any(|v| !v.is_finite())) {
            return Err(diverged("parameters", self.optimizer.steps));
        }

        if self.layout.weight_logits.is_none() && self.config.gamma_step > 0.0 {
            let observed: Vec<Vec<f64>> = lg
                .batch
                .embeddings
                .iter()
                .zip(&lg.batch.observed)
                .flat_map(|(zs, obs)| zs.iter().zip(obs).filter(|(_, o)| **o).map(|(z, _)| tape.value(*z).to_vec()))
                .collect();
            if !observed.is_empty() {
                let state = self.mixture_state();
                let phi: Responsibilities = mixture::responsibilities(&observed, &state).map_err(|e| match e {
                    DpmmError::DegenerateInput(_) => diverged("responsibilities", self.optimizer.steps),
                    other => other,
                })?;
                let state = MixtureState {
                    n_total: self.n_total.max(batch.len()),
                    ..state
                };
                self.sticks = mixture::update_gamma(&phi, &state, batch.len(), self.config.gamma_step)?;
            }
        }
        Ok(StepMetrics { loss, components })
    }

    fn adam_update(&mut self) {
        let opt = &mut self.optimizer;
        opt.steps += 1;
        let t = opt.steps as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        let mixture_ids = [Some(self.layout.mu), Some(self.layout.log_var), self.layout.weight_logits];
        let mix_lr = self.config.mixture_learning_rate.unwrap_or(self.config.learning_rate);
        for (i, p) in self.params.iter_mut().enumerate() {
            let lr = if mixture_ids.contains(&Some(ParamId(i))) { mix_lr } else { self.config.learning_rate };
            let (m1, m2) = (&mut opt.first[i], &mut opt.second[i]);
            for j in 0..p.values.len() {
                let g = p.grad[j];
                m1[j] = ADAM_BETA1 * m1[j] + (1.0 - ADAM_BETA1) * g;
                m2[j] = ADAM_BETA2 * m2[j] + (1.0 - ADAM_BETA2) * g * g;
                if lr != 0.0 {
                    let mhat = m1[j] / c1;
                    let vhat = m2[j] / c2;
                    p.values[j] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub task: f64,
    pub dp: f64,
    pub kl_sticks: f64,
    pub valid_auroc: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_valid_auroc: Option<f64>,
}

/// Trains on `train` with shuffled minibatches, tracks validation AUROC each
/// epoch, keeps the best state and stops once `max(patience, 1)` consecutive
/// epochs pass without improvement.
pub fn fit(train: &Dataset, valid: &Dataset, config: &TrainConfig) -> Result<FitOutcome> {
    config.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(invalid("training and validation splits must be nonempty"));
    }
    let dims = train
        .input_dims()
        .ok_or_else(|| invalid("some modality is never observed in the training split"))?;
    let mut model = Model::new(&dims, config.clone(), train.len())?;
    let mut history = Vec::new();
    let mut best: Option<(Model, usize, f64)> = None;
    let mut since_best = 0;
    let mut shuffle = rng::stream(config.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let mut sums = (0.0, LossComponents::default());
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&MultimodalSample> = chunk.iter().map(|&i| &train.samples[i]).collect();
            let m = model.train_step(&batch).map_err(|e| match e {
                DpmmError::Divergence { component, .. } => DpmmError::Divergence { component, epoch, step },
                other => other,
            })?;
            sums.0 += m.loss;
            sums.1.task += m.components.task;
            sums.1.dp += m.components.dp;
            batches += 1;
        }
        let valid_auroc = model.evaluate_auroc(valid)?;
        let nb = batches.max(1) as f64;
        history.push(EpochRecord {
            epoch,
            loss: sums.0 / nb,
            task: sums.1.task / nb,
            dp: sums.1.dp / nb,
            kl_sticks: kl_sticks(&model.sticks),
            valid_auroc,
        });
        if best.as_ref().is_none_or(|(_, _, a)| valid_auroc > *a) {
            best = Some((model.clone(), epoch, valid_auroc));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.early_stop_patience.max(1) {
                break;
            }
        }
    }
    Ok(match best {
        Some((m, e, a)) => FitOutcome {
            model: m,
            history,
            best_epoch: Some(e),
            best_valid_auroc: Some(a),
        },
        None => FitOutcome {
            model,
            history,
            best_epoch: None,
            best_valid_auroc: None,
        },
    })
}
