//! Library results checked against independent numerical references.

mod common;

use common::*;
use dpmm::data::{apply_mar_mask, generate, generator_truth, SynthConfig};
use dpmm::grad::{finite_diff_check, value_and_grad, ParamStore, ParamTensor};
use dpmm::math::{self, BetaParams, DiagGaussian};
use dpmm::metrics::{self, bootstrap_ci, Metric, ScoredSet};
use dpmm::rng::{self, Stream};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

#[test]
fn special_functions_match_statrs() {
    let mut r = rng::stream(1, Stream::Eval);
    for _ in 0..500 {
        let x: f64 = 10f64.powf(r.random_range(-3.0..3.0));
        let dg = math::digamma(x).unwrap();
        let lg = math::ln_gamma(x).unwrap();
        assert!((dg - statrs::function::gamma::digamma(x)).abs() <= 1e-10 * dg.abs().max(1.0), "digamma({x})");
        assert!((lg - statrs::function::gamma::ln_gamma(x)).abs() <= 1e-10 * lg.abs().max(1.0), "ln_gamma({x})");
    }
}

#[test]
fn kl_beta_matches_quadrature_on_fixed_cases() {
    for (qa, qb, pa, pb) in [(1.0, 1.0, 1.0, 2.0), (3.0, 0.7, 1.0, 1.0), (0.6, 5.0, 2.0, 2.0), (12.0, 30.0, 1.0, 0.5)] {
        let lib = math::kl_beta(BetaParams::new(qa, qb).unwrap(), BetaParams::new(pa, pb).unwrap()).unwrap();
        let quad = kl_beta_quadrature(qa, qb, pa, pb);
        assert!((lib - quad).abs() < 1e-8, "({qa},{qb})‖({pa},{pb}): {lib} vs {quad}");
    }
}

#[test]
fn gaussian_density_integrates_to_one() {
    let gh = gauss_hermite(60);
    let total_w: f64 = gh.iter().map(|(_, w)| w).sum();
    assert!((total_w - std::f64::consts::PI.sqrt()).abs() < 1e-12);
    for (mu, lv) in [(vec![0.0, 0.0], vec![0.0, 0.0]), (vec![1.5, -2.0], vec![0.7, -1.3])] {
        let g = DiagGaussian::new(mu.clone(), lv.clone()).unwrap();
        let s: Vec<f64> = lv.iter().map(|l| (0.5 * l).exp()).collect();
        // substitute z = μ + √2 σ x in each coordinate
        let mut mass = 0.0;
        let mut first_moment = 0.0;
        for &(x0, w0) in &gh {
            for &(x1, w1) in &gh {
                let z = [mu[0] + 2f64.sqrt() * s[0] * x0, mu[1] + 2f64.sqrt() * s[1] * x1];
                let jac = 2.0 * s[0] * s[1];
                let weight = w0 * w1 * (x0 * x0 + x1 * x1).exp() * jac;
                let p = math::diag_gauss_log_pdf(&z, &g).unwrap().exp();
                mass += weight * p;
                first_moment += weight * p * z[0];
            }
        }
        assert!((mass - 1.0).abs() < 1e-10, "mass {mass}");
        assert!((first_moment - mu[0]).abs() < 1e-9);
    }
}

#[test]
fn kl_gauss_matches_monte_carlo() {
    let q = DiagGaussian::new(vec![0.3, -1.0, 2.0], vec![0.2, -0.5, 0.1]).unwrap();
    let p = DiagGaussian::new(vec![0.0, 0.5, 1.0], vec![0.0, 0.3, -0.4]).unwrap();
    let exact = math::kl_gauss_diag(&q, &p).unwrap();
    let mut r = rng::stream(3, Stream::Eval);
    let n = 100_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let eps: Vec<f64> = (0..3).map(|_| r.sample(rand_distr::StandardNormal)).collect();
        let z = math::diag_gauss_sample(&q, &eps).unwrap();
        let v = math::diag_gauss_log_pdf(&z, &q).unwrap() - math::diag_gauss_log_pdf(&z, &p).unwrap();
        sum += v;
        sq += v * v;
    }
    let mean = sum / n as f64;
    let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
}

#[test]
fn finite_difference_harness_sensitivity() {
    // bce(sigmoid(dense(x))) chain
    let mut store = ParamStore::new();
    let w = store.add(ParamTensor::new("w", vec![1, 3], vec![0.4, -0.3, 0.8]).unwrap());
    let b = store.add(ParamTensor::new("b", vec![1], vec![0.1]).unwrap());
    let x = vec![1.0, 2.0, -0.5];
    let build = |s: &ParamStore, vals: Option<&[f64]>| {
        let mut s = s.clone();
        if let Some(v) = vals {
            s.set_flat_values(v).unwrap();
        }
        let mut tape = dpmm::grad::Tape::new();
        let xi = tape.input(x.clone());
        let (wv, bv) = (tape.param(&s, w), tape.param(&s, b));
        let logit = tape.dense(xi, wv, bv).unwrap();
        let p = tape.sigmoid(logit);
        let lp = tape.log(p);
        let nl = tape.scale(lp, -1.0);
        (tape.scalar(nl), tape, nl)
    };
    let (_, tape, loss) = build(&store, None);
    store.zero_grad();
    tape.backward(loss, &mut store).unwrap();
    let grad = store.flat_grads();
    let params = store.flat_values();
    let f = |v: &[f64]| build(&store, Some(v)).0;
    let ok = finite_diff_check(f, &params, &grad, 1e-5).unwrap();
    assert!(ok.passes(1e-4), "{ok:?}");
    let corrupted: Vec<f64> = grad.iter().map(|g| g * 1.01).collect();
    let bad = finite_diff_check(f, &params, &corrupted, 1e-5).unwrap();
    assert!(bad.max_rel_error > 5e-3);

    let mut quad = ParamStore::new();
    let p = quad.add(ParamTensor::new("p", vec![4], vec![0.5, -1.0, 2.0, 3.0]).unwrap());
    let (_, g) = value_and_grad(&mut quad, |t, s| {
        let v = t.param(s, p);
        let sq = t.mul(v, v)?;
        Ok(t.sum(sq))
    })
    .unwrap();
    let sum_sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    assert!(finite_diff_check(sum_sq, &quad.flat_values(), &g, 1e-5).unwrap().max_rel_error < 1e-8);
}

#[test]
fn generated_task_is_learnable_by_logistic_regression() {
    let cfg = SynthConfig {
        label_noise: 0.0,
        seed: 2,
        ..SynthConfig::default()
    };
    let (data, _) = generate(&cfg).unwrap();
    let x: Vec<Vec<f64>> = data
        .samples
        .iter()
        .map(|s| s.features.iter().flat_map(|f| f.clone().unwrap()).collect())
        .collect();
    let y = data.labels();
    let (train_x, test_x) = x.split_at(1500);
    let (train_y, test_y) = y.split_at(1500);
    let model = logistic_regression(train_x, train_y, 400, 0.5);
    let scores: Vec<f64> = test_x.iter().map(|r| model(r)).collect();
    let auc = metrics::auroc(&ScoredSet::new(scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect(), test_y.to_vec()).unwrap()).unwrap();
    assert!(auc >= 0.85, "logistic regression AUROC {auc}");
}

#[test]
fn noiseless_clusters_are_separable() {
    let cfg = SynthConfig { noise: 0.0, separation: 10.0, n: 300, ..SynthConfig::default() };
    let (data, clusters) = generate(&cfg).unwrap();
    let truth = generator_truth(&cfg);
    for m in 0..2 {
        for (s, &c) in data.samples.iter().zip(&clusters) {
            let x = s.features[m].as_ref().unwrap();
            let nearest = (0..3)
                .min_by(|&a, &b| {
                    let d = |k: usize| truth.cluster_means[m][k].iter().zip(x).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
                    d(a).total_cmp(&d(b))
                })
                .unwrap();
            assert_eq!(nearest, c);
        }
    }
}

#[test]
fn within_cluster_variance_matches_noise() {
    let cfg = SynthConfig { noise: 1.7, n: 5000, seed: 4, ..SynthConfig::default() };
    let (data, clusters) = generate(&cfg).unwrap();
    let truth = generator_truth(&cfg);
    for m in 0..2 {
        let dim = cfg.input_dims[m];
        let mut sq = vec![0.0; dim];
        for (s, &c) in data.samples.iter().zip(&clusters) {
            for (j, v) in s.features[m].as_ref().unwrap().iter().enumerate() {
                sq[j] += (v - truth.cluster_means[m][c][j]).powi(2);
            }
        }
        for v in sq {
            let var = v / cfg.n as f64;
            assert!((var / (1.7 * 1.7) - 1.0).abs() < 0.1, "variance {var}");
        }
    }
}

#[test]
fn mar_mask_is_independent_of_label() {
    let mut worst = 1.0f64;
    for seed in 0..20 {
        let cfg = SynthConfig { n: 2000, seed, ..SynthConfig::default() };
        let (data, _) = generate(&cfg).unwrap();
        let (masked, report) = apply_mar_mask(&data, 1, 0.4, seed + 1000).unwrap();
        assert_eq!(report.masked, 800);
        let mut table = [[0.0; 2]; 2];
        for s in &masked.samples {
            table[usize::from(!s.mask[1])][usize::from(s.label)] += 1.0;
        }
        let (_, p) = chi_square_2x2(table);
        worst = worst.min(p);
        assert!(p > 0.01, "seed {seed}: p = {p}");
        let p_all = (table[0][1] + table[1][1]) / 2000.0;
        let p_masked = table[1][1] / (table[1][0] + table[1][1]);
        assert!((p_masked - p_all).abs() < 0.03);
    }
    assert!(worst > 0.01);
}

#[test]
fn bootstrap_width_scales_with_sample_size() {
    let normal_pos = Normal::new(1.0, 1.0).unwrap();
    let normal_neg = Normal::new(0.0, 1.0).unwrap();
    let width = |n: usize, seed: u64| {
        let mut r = rng::substream(seed, Stream::Data, n as u64);
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let raw: Vec<f64> = labels
            .iter()
            .map(|&l| if l == 1 { normal_pos.sample(&mut r) } else { normal_neg.sample(&mut r) })
            .collect();
        let scores: Vec<f64> = raw.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let iv = bootstrap_ci(&ScoredSet::new(scores, labels).unwrap(), Metric::Auroc, 0.5, 400, seed).unwrap();
        iv.hi - iv.lo
    };
    let ratios: Vec<f64> = (0..15).map(|s| width(200, s) / width(800, s)).collect();
    let med = median(&ratios);
    assert!((1.6..=2.6).contains(&med), "median width ratio {med}");
}
