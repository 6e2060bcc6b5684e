//! Special functions, diagonal Gaussian and Beta primitives, closed-form KL divergences.
//!
//! Everything here is a pure function over `f64`. Gaussians carry log-variances
//! so that any real parameter vector maps to a valid distribution.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Shift below which the digamma and log-gamma evaluations use the recurrence.
const ASYMPTOTIC_CUTOFF: f64 = 10.0;

/// Mean and log-variance of an axis-aligned Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mu: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        check_dim(mu.len(), log_var.len())?;
        if mu.iter().chain(&log_var).any(|v| !v.is_finite()) {
            return Err(invalid("gaussian parameters must be finite"));
        }
        Ok(Self { mu, log_var })
    }

    /// Zero mean, unit variance.
    pub fn standard(dim: usize) -> Self {
        Self {
            mu: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (0.5 * lv).exp()).collect()
    }
}

/// Shape parameters of a Beta distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(invalid(format!("beta shapes must be positive, got ({a}, {b})")));
        }
        Ok(Self { a, b })
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }
}

/// `ln Σ exp(v_i)` with max-shift.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(invalid("log_sum_exp of an empty vector"));
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(invalid("log_sum_exp with a NaN entry"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(invalid("log_sum_exp with every entry -inf"));
    }
    if v.len() == 1 {
        return Ok(v[0]);
    }
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Digamma function for positive arguments.
///
/// Upward recurrence `ψ(x) = ψ(x+1) − 1/x` until `x ≥ 10`, then the asymptotic
/// expansion in `1/x²` through the `x⁻¹⁴` term.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(invalid(format!("digamma requires x > 0, got {x}")));
    }
    let mut shift = 0.0;
    let mut z = x;
    while z < ASYMPTOTIC_CUTOFF {
        shift -= 1.0 / z;
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // Bernoulli-number coefficients B_2n / (2n).
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    Ok(shift + z.ln() - 0.5 * inv - series)
}

/// Natural log of the gamma function for positive arguments (Stirling series after recurrence).
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(invalid(format!("ln_gamma requires x > 0, got {x}")));
    }
    let mut z = x;
    let mut log_shift = 0.0;
    let mut prod = 1.0;
    while z < ASYMPTOTIC_CUTOFF {
        prod *= z;
        // keep the running product away from under/overflow
        if !(1e-200..=1e200).contains(&prod) {
            log_shift += prod.ln();
            prod = 1.0;
        }
        z += 1.0;
    }
    log_shift += prod.ln();
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            - inv2
                * (1.0 / 360.0
                    - inv2
                        * (1.0 / 1260.0
                            - inv2
                                * (1.0 / 1680.0
                                    - inv2 * (1.0 / 1188.0 - inv2 * (691.0 / 360_360.0 - inv2 / 156.0))))));
    Ok((z - 0.5) * z.ln() - z + 0.5 * LN_2PI + series - log_shift)
}

/// `ln B(a, b)`.
pub fn log_beta_fn(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(invalid(format!("log_beta_fn requires positive shapes, got ({a}, {b})")));
    }
    Ok(ln_gamma(a)? + ln_gamma(b)? - ln_gamma(a + b)?)
}

/// Log density of a diagonal-covariance Gaussian.
pub fn diag_gauss_log_pdf(z: &[f64], g: &DiagGaussian) -> Result<f64> {
    check_dim(g.dim(), z.len())?;
    Ok(diag_log_pdf_unchecked(z, &g.mu, &g.log_var))
}

pub(crate) fn diag_log_pdf_unchecked(z: &[f64], mu: &[f64], log_var: &[f64]) -> f64 {
    let mut acc = -0.5 * z.len() as f64 * LN_2PI;
    for ((zj, mj), lv) in z.iter().zip(mu).zip(log_var) {
        let diff = zj - mj;
        acc -= 0.5 * (lv + diff * diff * (-lv).exp());
    }
    acc
}

/// Reparameterized draw `μ + exp(½ log_var) ⊙ eps`.
pub fn diag_gauss_sample(g: &DiagGaussian, eps: &[f64]) -> Result<Vec<f64>> {
    check_dim(g.dim(), eps.len())?;
    Ok(g.mu
        .iter()
        .zip(&g.log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// `KL(q ‖ p)` for diagonal Gaussians.
pub fn kl_gauss_diag(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    check_dim(p.dim(), q.dim())?;
    let mut acc = 0.0;
    for j in 0..q.dim() {
        let diff = p.mu[j] - q.mu[j];
        let inv_p = (-p.log_var[j]).exp();
        acc += p.log_var[j] - q.log_var[j] - 1.0 + (q.log_var[j] - p.log_var[j]).exp() + diff * diff * inv_p;
    }
    Ok(0.5 * acc)
}

/// `KL(Beta(q.a, q.b) ‖ Beta(p.a, p.b))`.
pub fn kl_beta(q: BetaParams, p: BetaParams) -> Result<f64> {
    for s in [q.a, q.b, p.a, p.b] {
        if !(s > 0.0) {
            return Err(invalid(format!("kl_beta requires positive shapes, got {s}")));
        }
    }
    let psi_a = digamma(q.a)?;
    let psi_b = digamma(q.b)?;
    let psi_ab = digamma(q.a + q.b)?;
    let kl = log_beta_fn(p.a, p.b)? - log_beta_fn(q.a, q.b)?
        + (q.a - p.a) * psi_a
        + (q.b - p.b) * psi_b
        + (p.a - q.a + p.b - q.b) * psi_ab;
    // rounding can push an exact zero slightly negative
    Ok(kl.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn log_sum_exp_cases() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[3.25]).unwrap(), 3.25);
        assert_eq!(log_sum_exp(&[-7.5]).unwrap(), -7.5);
        let big = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!(big.is_finite());
        assert!((big - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!(log_sum_exp(&[]).is_err());
        assert!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).is_err());
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 2.0]).unwrap(), 2.0);
    }

    #[test]
    fn digamma_reference_values() {
        assert!((digamma(1.0).unwrap() + EULER_GAMMA).abs() < 1e-12);
        assert!((digamma(2.0).unwrap() - (1.0 - EULER_GAMMA)).abs() < 1e-12);
        // ψ(1/2) = −γ − 2 ln 2
        assert!((digamma(0.5).unwrap() - (-EULER_GAMMA - 2.0 * 2f64.ln())).abs() < 1e-12);
        assert!(digamma(0.0).is_err());
        assert!(digamma(-1.0).is_err());
    }

    #[test]
    fn digamma_recurrence_over_range() {
        let mut x = 0.01;
        while x < 1e4 {
            let lhs = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert!((lhs - 1.0 / x).abs() < 1e-10, "x={x}");
            x *= 1.37;
        }
    }

    #[test]
    fn ln_gamma_factorials() {
        let mut fact = 1.0f64;
        for n in 1..30 {
            assert!((ln_gamma(n as f64).unwrap() - fact.ln()).abs() < 1e-11 * fact.ln().max(1.0));
            fact *= n as f64;
        }
        // Γ(1/2) = √π
        assert!((ln_gamma(0.5).unwrap() - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-13);
        assert!(ln_gamma(1e-300).unwrap().is_finite());
    }

    #[test]
    fn log_beta_cases() {
        assert!(log_beta_fn(1.0, 1.0).unwrap().abs() < 1e-14);
        assert!((log_beta_fn(2.0, 1.0).unwrap() - 0.5f64.ln()).abs() < 1e-14);
        assert_eq!(log_beta_fn(3.7, 0.4).unwrap(), log_beta_fn(0.4, 3.7).unwrap());
        assert!(log_beta_fn(0.0, 1.0).is_err());
    }

    #[test]
    fn gaussian_log_pdf_cases() {
        let g = DiagGaussian::standard(1);
        assert!((diag_gauss_log_pdf(&[0.0], &g).unwrap() + 0.918_938_533_204_672_8).abs() < 1e-15);
        assert!((diag_gauss_log_pdf(&[1.0], &g).unwrap() + 1.418_938_533_204_672_8).abs() < 1e-15);
        let g2 = DiagGaussian::new(vec![0.3, -1.0], vec![0.2, -0.7]).unwrap();
        let a = DiagGaussian::new(vec![0.3], vec![0.2]).unwrap();
        let b = DiagGaussian::new(vec![-1.0], vec![-0.7]).unwrap();
        let joint = diag_gauss_log_pdf(&[1.1, 0.4], &g2).unwrap();
        let split = diag_gauss_log_pdf(&[1.1], &a).unwrap() + diag_gauss_log_pdf(&[0.4], &b).unwrap();
        assert!((joint - split).abs() < 1e-14);
        assert!(diag_gauss_log_pdf(&[0.0, 1.0], &g).is_err());
    }

    #[test]
    fn sample_cases() {
        let g = DiagGaussian::new(vec![1.0, -2.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(diag_gauss_sample(&g, &[0.0, 0.0]).unwrap(), g.mu);
        assert_eq!(diag_gauss_sample(&g, &[0.5, 0.25]).unwrap(), vec![1.5, -1.75]);
        assert!(diag_gauss_sample(&g, &[0.0]).is_err());
    }

    #[test]
    fn kl_gauss_cases() {
        let p = DiagGaussian::standard(1);
        let q = DiagGaussian::new(vec![1.0], vec![0.0]).unwrap();
        assert!((kl_gauss_diag(&q, &p).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(kl_gauss_diag(&p, &p).unwrap(), 0.0);
        assert!(kl_gauss_diag(&q, &DiagGaussian::standard(2)).is_err());
    }

    #[test]
    fn kl_beta_cases() {
        let prior = BetaParams::new(1.0, 2.5).unwrap();
        assert!(kl_beta(prior, prior).unwrap() < 1e-14);
        let v = kl_beta(BetaParams { a: 2.0, b: 1.0 }, BetaParams { a: 1.0, b: 1.0 }).unwrap();
        assert!((v - (2f64.ln() - 0.5)).abs() < 1e-12);
        assert!(kl_beta(BetaParams { a: 0.0, b: 1.0 }, prior).is_err());
        assert!(BetaParams::new(-1.0, 1.0).is_err());
    }
}
