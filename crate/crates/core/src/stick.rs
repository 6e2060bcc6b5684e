//! Truncated multimodal stick-breaking.
//!
//! The `M·K` sticks are broken in a single linear order: all modalities of
//! mixture index 1, then all modalities of mixture index 2, and so on. Position
//! `r` therefore receives `β_r Π_{s<r}(1 − β_s)`, which is exactly the double
//! product over `(i ∈ [M], j < k)` and `(l < m)`. The last stick is fixed to 1
//! so the weights close to a simplex.

use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::math::{digamma, kl_beta, BetaParams};
use crate::rng::{self, Stream};

/// Maps 1-based `(m, k)` to the 1-based linear stick position `(k−1)·M + m`.
pub fn linear_index(m: usize, k: usize, num_modalities: usize, truncation: usize) -> Result<usize> {
    if m == 0 || m > num_modalities || k == 0 || k > truncation {
        return Err(invalid(format!(
            "component ({m}, {k}) outside [1, {num_modalities}] x [1, {truncation}]"
        )));
    }
    Ok((k - 1) * num_modalities + m)
}

/// Inverse of [`linear_index`].
pub fn modality_component(r: usize, num_modalities: usize, truncation: usize) -> Result<(usize, usize)> {
    if r == 0 || r > num_modalities * truncation {
        return Err(invalid(format!("linear position {r} outside [1, {}]", num_modalities * truncation)));
    }
    Ok(((r - 1) % num_modalities + 1, (r - 1) / num_modalities + 1))
}

/// Simplex of `M·K` mixture weights in linear stick order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `π_r = β_r Π_{s<r} (1 − β_s)`.
pub fn weights_from_sticks(beta: &[f64]) -> Result<WeightVector> {
    if beta.is_empty() {
        return Err(invalid("no sticks"));
    }
    let mut pi = Vec::with_capacity(beta.len());
    let mut remaining = 1.0;
    for &b in beta {
        if !(b > 0.0 && b <= 1.0) {
            return Err(invalid(format!("stick proportion {b} outside (0, 1]")));
        }
        pi.push(b * remaining);
        remaining *= 1.0 - b;
    }
    Ok(WeightVector(pi))
}

/// Variational Beta factors `q(β_r) = Beta(γ1_r, γ2_r)` for every linear stick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StickState {
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub eta: f64,
    pub num_modalities: usize,
    pub truncation: usize,
}

impl StickState {
    /// Every factor at the `Beta(1, η)` prior.
    pub fn prior(eta: f64, num_modalities: usize, truncation: usize) -> Result<Self> {
        let n = num_modalities * truncation;
        Self::new(vec![1.0; n], vec![eta; n], eta, num_modalities, truncation)
    }

    pub fn new(
        gamma1: Vec<f64>,
        gamma2: Vec<f64>,
        eta: f64,
        num_modalities: usize,
        truncation: usize,
    ) -> Result<Self> {
        if num_modalities == 0 || truncation == 0 {
            return Err(invalid("M and K must be at least 1"));
        }
        let n = num_modalities * truncation;
        if gamma1.len() != n || gamma2.len() != n {
            return Err(invalid(format!(
                "expected {n} stick shapes, got ({}, {})",
                gamma1.len(),
                gamma2.len()
            )));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(invalid(format!("concentration must be positive, got {eta}")));
        }
        if gamma1.iter().chain(&gamma2).any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(invalid("stick shapes must be positive and finite"));
        }
        Ok(Self {
            gamma1,
            gamma2,
            eta,
            num_modalities,
            truncation,
        })
    }

    pub fn len(&self) -> usize {
        self.gamma1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma1.is_empty()
    }
}

/// `(E[log β_r], E[log(1 − β_r)])` under each variational factor.
pub fn expected_log_sticks(s: &StickState) -> (Vec<f64>, Vec<f64>) {
    let mut elog_beta = Vec::with_capacity(s.len());
    let mut elog_rest = Vec::with_capacity(s.len());
    for (&g1, &g2) in s.gamma1.iter().zip(&s.gamma2) {
        // shapes are validated positive on construction
        let total = digamma(g1 + g2).expect("positive stick shapes");
        elog_beta.push(digamma(g1).expect("positive stick shapes") - total);
        elog_rest.push(digamma(g2).expect("positive stick shapes") - total);
    }
    (elog_beta, elog_rest)
}

/// `E[log π_r] = E[log β_r] + Σ_{s<r} E[log(1 − β_s)]`.
pub fn expected_log_weights(s: &StickState) -> Vec<f64> {
    let (elog_beta, elog_rest) = expected_log_sticks(s);
    let mut acc = 0.0;
    elog_beta
        .iter()
        .zip(&elog_rest)
        .map(|(eb, er)| {
            let v = eb + acc;
            acc += er;
            v
        })
        .collect()
}

/// Plug-in weights from the posterior-mean sticks, last stick closed at 1.
pub fn mean_weights(s: &StickState) -> WeightVector {
    let n = s.len();
    let mut beta: Vec<f64> = s.gamma1.iter().zip(&s.gamma2).map(|(a, b)| a / (a + b)).collect();
    beta[n - 1] = 1.0;
    weights_from_sticks(&beta).expect("posterior means lie in (0, 1)")
}

/// One draw of the truncated prior weights, deterministic in `seed`.
pub fn sample_prior_weights(eta: f64, num_modalities: usize, truncation: usize, seed: u64) -> Result<WeightVector> {
    let mut rng = rng::stream(seed, Stream::Prior);
    sample_prior_weights_with(eta, num_modalities * truncation, &mut rng)
}

pub fn sample_prior_weights_with(eta: f64, len: usize, rng: &mut rng::Rng) -> Result<WeightVector> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid(format!("concentration must be positive, got {eta}")));
    }
    if len == 0 {
        return Err(invalid("no sticks"));
    }
    let dist = Beta::new(1.0, eta).map_err(|e| invalid(e.to_string()))?;
    let mut beta = Vec::with_capacity(len);
    for _ in 0..len - 1 {
        // Beta draws can underflow to exactly 0 for tiny shapes
        beta.push(dist.sample(rng).max(f64::MIN_POSITIVE));
    }
    beta.push(1.0);
    weights_from_sticks(&beta)
}

/// Analytic prior mean of the untruncated weight at 1-based position `r`.
pub fn prior_mean_weight(eta: f64, r: usize) -> f64 {
    (1.0 / (1.0 + eta)) * (eta / (1.0 + eta)).powi(r as i32 - 1)
}

/// `Σ_{r<MK} KL(Beta(γ1_r, γ2_r) ‖ Beta(1, η))`; the closing stick is deterministic.
pub fn kl_sticks(s: &StickState) -> f64 {
    kl_sticks_through(s, s.len() - 1)
}

/// KL summed over the first `count` sticks.
pub(crate) fn kl_sticks_through(s: &StickState, count: usize) -> f64 {
    let prior = BetaParams { a: 1.0, b: s.eta };
    (0..count)
        .map(|r| {
            kl_beta(BetaParams { a: s.gamma1[r], b: s.gamma2[r] }, prior).expect("positive stick shapes")
        })
        .sum()
}
