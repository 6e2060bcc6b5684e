//! Independent reference implementations used by the oracle and acceptance tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;

/// Tanh-sinh quadrature of `f(x, 1 − x)` over (0, 1); `1 − x` is passed
/// separately so integrands stay accurate near the upper endpoint.
pub fn integrate_unit<F: Fn(f64, f64) -> f64>(f: F) -> f64 {
    let h: f64 = 1.0 / 256.0;
    let mut total = 0.0;
    let mut k: f64 = -6.5 / h;
    while k <= 6.5 / h {
        let t = k * h;
        let u = 0.5 * PI * t.sinh();
        let x = 1.0 / (1.0 + (-2.0 * u).exp());
        let one_minus = 1.0 / (1.0 + (2.0 * u).exp());
        let w = 2.0 * x * one_minus * 0.5 * PI * t.cosh();
        if x > 0.0 && one_minus > 0.0 && w > 0.0 {
            let v = f(x, one_minus);
            if v.is_finite() {
                total += w * v;
            }
        }
        k += 1.0;
    }
    total * h
}

pub fn beta_log_pdf(x: f64, one_minus: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * x.ln() + (b - 1.0) * one_minus.ln() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b))
}

/// `∫ q log(q / p)` for two Beta densities by quadrature.
pub fn kl_beta_quadrature(qa: f64, qb: f64, pa: f64, pb: f64) -> f64 {
    integrate_unit(|x, y| {
        let lq = beta_log_pdf(x, y, qa, qb);
        lq.exp() * (lq - beta_log_pdf(x, y, pa, pb))
    })
}

/// Gauss–Hermite nodes and weights for `∫ e^{−x²} f(x) dx`, by Newton iteration on the orthonormal recurrence.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut z = 0.0;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * out[0].0,
            3 => 1.91 * z - 0.91 * out[1].0,
            _ => 2.0 * z - out[i - 2].0,
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PI.powf(-0.25);
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2 - ((j as f64) / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        out.push((z, 2.0 / (pp * pp)));
    }
    let mut nodes: Vec<(f64, f64)> = out.iter().map(|&(x, w)| (-x, w)).collect();
    for &(x, w) in out.iter().rev() {
        if x != 0.0 || n % 2 == 0 {
            nodes.push((x, w));
        }
    }
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    nodes.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-14);
    nodes
}

/// Pair-counting AUROC: concordant plus half of tied positive/negative pairs.
pub fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Average precision by enumerating every distinct score as a cutoff.
pub fn brute_aupr(scores: &[f64], labels: &[u8]) -> f64 {
    let total_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let mut cutoffs: Vec<f64> = scores.to_vec();
    cutoffs.sort_by(|a, b| b.total_cmp(a));
    cutoffs.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for c in cutoffs {
        let (mut tp, mut fp) = (0.0, 0.0);
        for (s, l) in scores.iter().zip(labels) {
            if *s >= c {
                if *l == 1 {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let recall = tp / total_pos;
        ap += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    ap
}

/// Logistic regression by full-batch gradient descent on standardized features.
pub fn logistic_regression(x: &[Vec<f64>], y: &[u8], iters: usize, lr: f64) -> impl Fn(&[f64]) -> f64 {
    let d = x[0].len();
    let n = x.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| (x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-12))
        .collect();
    let std = move |r: &[f64]| -> Vec<f64> { r.iter().enumerate().map(|(j, v)| (v - mean[j]) / sd[j]).collect() };
    let xs: Vec<Vec<f64>> = x.iter().map(|r| std(r)).collect();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..iters {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (r, &label) in xs.iter().zip(y) {
            let p = 1.0 / (1.0 + (-(b + r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>())).exp());
            let e = p - f64::from(label);
            gb += e;
            gw.iter_mut().zip(r).for_each(|(g, v)| *g += e * v);
        }
        b -= lr * gb / n;
        w.iter_mut().zip(&gw).for_each(|(wj, g)| *wj -= lr * (g / n + 1e-3 * *wj));
    }
    move |r: &[f64]| b + std(r).iter().zip(&w).map(|(a, c)| a * c).sum::<f64>()
}

/// Pearson chi-square statistic and p-value (1 degree of freedom) for a 2×2 table.
pub fn chi_square_2x2(table: [[f64; 2]; 2]) -> (f64, f64) {
    let n: f64 = table.iter().flatten().sum();
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    let mut stat = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let e = rows[i] * cols[j] / n;
            stat += (table[i][j] - e).powi(2) / e;
        }
    }
    (stat, statrs::function::erf::erfc((stat / 2.0).sqrt()))
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
