//! Dirichlet-process Gaussian mixture over the `M·K` per-modality components.
//!
//! Components are stored in linear stick order (see [`crate::stick`]). The
//! joint density uses the global simplex; per-modality marginals renormalize
//! the `K` weights belonging to that modality.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, DpmmError, Result};
use crate::grad::{gumbel_softmax, standard_normal};
use crate::math::{diag_log_pdf_unchecked, log_sum_exp, DiagGaussian};
use crate::rng::{self, Rng, Stream};
use crate::stick::{self, expected_log_weights, kl_sticks, mean_weights, StickState, WeightVector};

/// Gaussian components in linear stick order; modality indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentBank {
    pub components: Vec<DiagGaussian>,
    pub num_modalities: usize,
    pub truncation: usize,
    pub dim: usize,
}

impl ComponentBank {
    /// Every component at `N(0, I)`.
    pub fn standard(num_modalities: usize, truncation: usize, dim: usize) -> Self {
        Self {
            components: vec![DiagGaussian::standard(dim); num_modalities * truncation],
            num_modalities,
            truncation,
            dim,
        }
    }

    pub fn new(components: Vec<DiagGaussian>, num_modalities: usize, truncation: usize) -> Result<Self> {
        if components.len() != num_modalities * truncation || components.is_empty() {
            return Err(invalid(format!(
                "expected {} components, got {}",
                num_modalities * truncation,
                components.len()
            )));
        }
        let dim = components[0].dim();
        for c in &components {
            check_dim(dim, c.dim())?;
        }
        Ok(Self {
            components,
            num_modalities,
            truncation,
            dim,
        })
    }

    /// 0-based linear position of (modality `m`, mixture index `k`).
    pub fn position(&self, m: usize, k: usize) -> usize {
        k * self.num_modalities + m
    }

    pub fn component(&self, m: usize, k: usize) -> &DiagGaussian {
        &self.components[self.position(m, k)]
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Posterior responsibilities, one simplex row per embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub phi: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    pub sticks: StickState,
    pub bank: ComponentBank,
    pub lambda_dp: f64,
    pub n_total: usize,
}

impl MixtureState {
    pub fn new(sticks: StickState, bank: ComponentBank, lambda_dp: f64, n_total: usize) -> Result<Self> {
        if sticks.num_modalities != bank.num_modalities || sticks.truncation != bank.truncation {
            return Err(invalid("stick and component layouts disagree"));
        }
        if !(lambda_dp >= 0.0) {
            return Err(invalid(format!("lambda_dp must be nonnegative, got {lambda_dp}")));
        }
        Ok(Self {
            sticks,
            bank,
            lambda_dp,
            n_total,
        })
    }

    pub fn num_modalities(&self) -> usize {
        self.bank.num_modalities
    }

    pub fn truncation(&self) -> usize {
        self.bank.truncation
    }
}

/// Log-likelihood of `z` under every component, in linear order.
pub fn component_log_liks(z: &[f64], bank: &ComponentBank) -> Result<Vec<f64>> {
    check_dim(bank.dim, z.len())?;
    Ok(bank
        .components
        .iter()
        .map(|c| diag_log_pdf_unchecked(z, &c.mu, &c.log_var))
        .collect())
}

/// `log Σ_r π_r N(z; μ_r, Σ_r)` over all `M·K` components.
pub fn joint_log_density(z: &[f64], pi: &WeightVector, bank: &ComponentBank) -> Result<f64> {
    check_dim(bank.len(), pi.len())?;
    let ll = component_log_liks(z, bank)?;
    let terms: Vec<f64> = ll.iter().zip(pi.as_slice()).map(|(l, p)| p.ln() + l).collect();
    log_sum_exp(&terms)
}

/// The `K` weights of modality `m` rescaled to sum to one.
pub fn within_modality_weights(pi: &WeightVector, m: usize, num_modalities: usize, truncation: usize) -> Result<Vec<f64>> {
    if m >= num_modalities {
        return Err(invalid(format!("modality {m} out of range 0..{num_modalities}")));
    }
    check_dim(num_modalities * truncation, pi.len())?;
    let raw: Vec<f64> = (0..truncation).map(|k| pi.0[k * num_modalities + m]).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(DpmmError::DegenerateModality { modality: m });
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Log density of the modality-`m` marginal with renormalized plug-in weights.
pub fn marginal_log_density(z: &[f64], m: usize, state: &MixtureState) -> Result<f64> {
    let w = within_modality_weights(&mean_weights(&state.sticks), m, state.num_modalities(), state.truncation())?;
    check_dim(state.bank.dim, z.len())?;
    let terms: Vec<f64> = (0..state.truncation())
        .map(|k| {
            let c = state.bank.component(m, k);
            w[k].ln() + diag_log_pdf_unchecked(z, &c.mu, &c.log_var)
        })
        .collect();
    log_sum_exp(&terms)
}

/// Normalized responsibilities `φ_r ∝ exp(E[log π_r] + log N(z; μ_r, Σ_r))`.
pub fn responsibilities(z_batch: &[Vec<f64>], state: &MixtureState) -> Result<Responsibilities> {
    if z_batch.is_empty() {
        return Err(invalid("responsibilities of an empty batch"));
    }
    let elog_pi = expected_log_weights(&state.sticks);
    let mut phi = Vec::with_capacity(z_batch.len());
    for z in z_batch {
        let ll = component_log_liks(z, &state.bank)?;
        let logits: Vec<f64> = ll.iter().zip(&elog_pi).map(|(l, e)| l + e).collect();
        let norm = log_sum_exp(&logits).map_err(|_| DpmmError::DegenerateInput("every component log-likelihood is -inf".into()))?;
        if !norm.is_finite() {
            return Err(DpmmError::DegenerateInput("non-finite responsibility normalizer".into()));
        }
        phi.push(logits.iter().map(|l| (l - norm).exp()).collect());
    }
    Ok(Responsibilities { phi })
}

/// Stochastic natural-gradient update of the stick factors.
///
/// Targets are `γ̂1_r = 1 + (n/B) Σ_i φ_ir` and `γ̂2_r = η + (n/B) Σ_i Σ_{s>r} φ_is`;
/// the result blends `(1 − step) γ + step γ̂`.
pub fn update_gamma(phi: &Responsibilities, state: &MixtureState, batch_size: usize, step: f64) -> Result<StickState> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(invalid(format!("step must lie in (0, 1], got {step}")));
    }
    if batch_size == 0 {
        return Err(invalid("batch size must be at least 1"));
    }
    if state.n_total < batch_size {
        return Err(invalid(format!("dataset size {} smaller than batch {batch_size}", state.n_total)));
    }
    let s = &state.sticks;
    let len = s.len();
    let mut counts = vec![0.0; len];
    for row in &phi.phi {
        check_dim(len, row.len())?;
        counts.iter_mut().zip(row).for_each(|(c, p)| *c += p);
    }
    let scale = state.n_total as f64 / batch_size as f64;
    let mut tail = 0.0;
    let mut target2 = vec![0.0; len];
    for r in (0..len).rev() {
        target2[r] = s.eta + scale * tail;
        tail += counts[r];
    }
    let gamma1 = s
        .gamma1
        .iter()
        .zip(&counts)
        .map(|(g, c)| (1.0 - step) * g + step * (1.0 + scale * c))
        .collect();
    let gamma2 = s
        .gamma2
        .iter()
        .zip(&target2)
        .map(|(g, t)| (1.0 - step) * g + step * t)
        .collect();
    StickState::new(gamma1, gamma2, s.eta, s.num_modalities, s.truncation)
}

/// One embedding as seen by the DP regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedEmbedding {
    pub z: Vec<f64>,
    pub modality: usize,
    pub observed: bool,
}

impl TaggedEmbedding {
    pub fn observed(z: Vec<f64>, modality: usize) -> Self {
        Self { z, modality, observed: true }
    }
}

/// Per-sample DP regularizer: mean negative joint log density of the observed
/// embeddings plus the stick KL spread over the dataset.
///
/// `batch_size` is the number of samples the embeddings came from; pass `None`
/// to use the number of entries in `batch`.
pub fn dp_loss(batch: &[TaggedEmbedding], state: &MixtureState, batch_size: Option<usize>) -> Result<f64> {
    Ok(dp_loss_with_grad(batch, state, batch_size)?.value)
}

/// DP loss and its analytic gradient with respect to every component mean and log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct DpLossGrad {
    pub value: f64,
    pub grad_mu: Vec<Vec<f64>>,
    pub grad_log_var: Vec<Vec<f64>>,
}

pub fn dp_loss_with_grad(batch: &[TaggedEmbedding], state: &MixtureState, batch_size: Option<usize>) -> Result<DpLossGrad> {
    let b = batch_size.unwrap_or(batch.len());
    if b == 0 {
        return Err(invalid("dp_loss of an empty batch"));
    }
    let bank = &state.bank;
    let pi = mean_weights(&state.sticks);
    let log_pi: Vec<f64> = pi.0.iter().map(|p| p.ln()).collect();
    let mut grad_mu = vec![vec![0.0; bank.dim]; bank.len()];
    let mut grad_log_var = vec![vec![0.0; bank.dim]; bank.len()];
    let mut nll = 0.0;
    let inv_b = 1.0 / b as f64;
    for e in batch.iter().filter(|e| e.observed) {
        let ll = component_log_liks(&e.z, bank)?;
        let terms: Vec<f64> = ll.iter().zip(&log_pi).map(|(l, p)| l + p).collect();
        let lse = log_sum_exp(&terms)?;
        nll -= lse;
        for (r, c) in bank.components.iter().enumerate() {
            let rho = (terms[r] - lse).exp();
            if rho == 0.0 {
                continue;
            }
            for j in 0..bank.dim {
                let prec = (-c.log_var[j]).exp();
                let diff = e.z[j] - c.mu[j];
                grad_mu[r][j] -= inv_b * rho * diff * prec;
                grad_log_var[r][j] -= inv_b * rho * 0.5 * (diff * diff * prec - 1.0);
            }
        }
    }
    let kl = if state.n_total > 0 {
        kl_sticks(&state.sticks) / state.n_total as f64
    } else {
        0.0
    };
    Ok(DpLossGrad {
        value: nll * inv_b + kl,
        grad_mu,
        grad_log_var,
    })
}

/// `−(task_loss + λ_DP · dp_loss)`.
pub fn elbo(batch: &[TaggedEmbedding], state: &MixtureState, task_loss: f64) -> Result<f64> {
    if !task_loss.is_finite() {
        return Err(invalid("task loss must be finite"));
    }
    if state.lambda_dp == 0.0 {
        return Ok(-task_loss);
    }
    Ok(-(task_loss + state.lambda_dp * dp_loss(batch, state, None)?))
}

/// Coordinate-ascent objective with the expected log weights in place of the plug-in ones:
/// `Σ_i log Σ_r exp(E[log π_r] + log N(z_i; μ_r, Σ_r)) − Σ_r KL(q(β_r) ‖ Beta(1, η))`.
///
/// All `M·K` stick factors enter, matching the responsibilities and the γ update.
pub fn cavi_objective(z_batch: &[Vec<f64>], state: &MixtureState) -> Result<f64> {
    let elog_pi = expected_log_weights(&state.sticks);
    let mut total = 0.0;
    for z in z_batch {
        let ll = component_log_liks(z, &state.bank)?;
        let terms: Vec<f64> = ll.iter().zip(&elog_pi).map(|(l, e)| l + e).collect();
        total += log_sum_exp(&terms)?;
    }
    Ok(total - stick::kl_sticks_through(&state.sticks, state.sticks.len()))
}

/// One full-batch responsibility / γ sweep with components frozen.
pub fn cavi_sweep(z_batch: &[Vec<f64>], state: &MixtureState) -> Result<StickState> {
    let phi = responsibilities(z_batch, state)?;
    let full = MixtureState {
        n_total: z_batch.len(),
        ..state.clone()
    };
    update_gamma(&phi, &full, z_batch.len(), 1.0)
}

/// One draw from a modality marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalDraw {
    pub z: Vec<f64>,
    /// Selection actually applied (one-hot when hard).
    pub selection: Vec<f64>,
    /// Relaxed Gumbel-softmax weights.
    pub soft_weights: Vec<f64>,
    pub component: usize,
}

/// Gumbel-softmax component choice over the renormalized modality weights,
/// then `z = Σ_k s_k (μ_k + σ_k ⊙ ε_k)`.
pub fn sample_marginal(m: usize, state: &MixtureState, tau: f64, rng: &mut Rng, hard: bool) -> Result<MarginalDraw> {
    if !(tau > 0.0) {
        return Err(invalid(format!("temperature must be positive, got {tau}")));
    }
    let w = within_modality_weights(&mean_weights(&state.sticks), m, state.num_modalities(), state.truncation())?;
    let logits: Vec<f64> = w.iter().map(|v| v.ln()).collect();
    let draw = gumbel_softmax(&logits, tau, rng, hard)?;
    let dim = state.bank.dim;
    let mut z = vec![0.0; dim];
    for (k, s) in draw.output.iter().enumerate() {
        let c = state.bank.component(m, k);
        let eps = standard_normal(dim, rng);
        if *s == 0.0 {
            continue;
        }
        for j in 0..dim {
            z[j] += s * (c.mu[j] + (0.5 * c.log_var[j]).exp() * eps[j]);
        }
    }
    Ok(MarginalDraw {
        z,
        selection: draw.output,
        soft_weights: draw.soft,
        component: draw.argmax,
    })
}

/// Settings for fitting the mixture directly to fixed embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFitConfig {
    pub num_modalities: usize,
    pub truncation: usize,
    pub eta: f64,
    pub iterations: usize,
    pub var_floor: f64,
    pub seed: u64,
}

impl Default for MixtureFitConfig {
    fn default() -> Self {
        Self {
            num_modalities: 1,
            truncation: 4,
            eta: 1.0,
            iterations: 300,
            var_floor: 1e-4,
            seed: 0,
        }
    }
}

/// Coordinate ascent on fixed data: responsibilities, full-batch γ update,
/// then the closed-form point estimate of every component given φ.
///
/// Components start at k-means++ picks from the data with the pooled variance.
pub fn fit_mixture(data: &[Vec<f64>], cfg: &MixtureFitConfig) -> Result<MixtureState> {
    let n = data.len();
    let total = cfg.num_modalities * cfg.truncation;
    if n == 0 || total == 0 {
        return Err(invalid("fit_mixture needs data and at least one component"));
    }
    let dim = data[0].len();
    for z in data {
        check_dim(dim, z.len())?;
    }
    let mut rng = rng::stream(cfg.seed, Stream::Init);
    let pooled = pooled_log_var(data, cfg.var_floor);
    let centers = kmeans_pp(data, total, &mut rng);
    let components = centers
        .into_iter()
        .map(|mu| DiagGaussian { mu, log_var: pooled.clone() })
        .collect();
    let bank = ComponentBank::new(components, cfg.num_modalities, cfg.truncation)?;
    let sticks = StickState::prior(cfg.eta, cfg.num_modalities, cfg.truncation)?;
    let mut state = MixtureState::new(sticks, bank, 0.0, n)?;
    for _ in 0..cfg.iterations {
        let phi = responsibilities(data, &state)?;
        state.sticks = update_gamma(&phi, &state, n, 1.0)?;
        for r in 0..total {
            let nk: f64 = phi.phi.iter().map(|row| row[r]).sum();
            if nk < 1e-8 {
                continue;
            }
            let comp = &mut state.bank.components[r];
            for j in 0..dim {
                let mean = phi.phi.iter().zip(data).map(|(row, z)| row[r] * z[j]).sum::<f64>() / nk;
                let var = phi
                    .phi
                    .iter()
                    .zip(data)
                    .map(|(row, z)| row[r] * (z[j] - mean).powi(2))
                    .sum::<f64>()
                    / nk;
                comp.mu[j] = mean;
                comp.log_var[j] = var.max(cfg.var_floor).ln();
            }
        }
    }
    Ok(state)
}

/// Average plug-in log density over `data`.
pub fn mean_log_likelihood(data: &[Vec<f64>], state: &MixtureState) -> Result<f64> {
    if data.is_empty() {
        return Err(invalid("no data"));
    }
    let pi = mean_weights(&state.sticks);
    let mut total = 0.0;
    for z in data {
        total += joint_log_density(z, &pi, &state.bank)?;
    }
    Ok(total / data.len() as f64)
}

fn pooled_log_var(data: &[Vec<f64>], floor: f64) -> Vec<f64> {
    let n = data.len() as f64;
    let dim = data[0].len();
    (0..dim)
        .map(|j| {
            let mean = data.iter().map(|z| z[j]).sum::<f64>() / n;
            let var = data.iter().map(|z| (z[j] - mean).powi(2)).sum::<f64>() / n;
            var.max(floor).ln()
        })
        .collect()
}

fn kmeans_pp(data: &[Vec<f64>], count: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut centers = vec![data.choose(rng).expect("nonempty data").clone()];
    let mut dist: Vec<f64> = data.iter().map(|z| sq(z, &centers[0])).collect();
    while centers.len() < count {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = data.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            data[pick].clone()
        } else {
            data.choose(rng).expect("nonempty data").clone()
        };
        dist.iter_mut().zip(data).for_each(|(d, z)| *d = d.min(sq(z, &next)));
        centers.push(next);
    }
    centers
}
