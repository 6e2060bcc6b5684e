//! Ranking and thresholded classification metrics with percentile bootstrap intervals.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, DpmmError, Result};
use crate::rng::{self, Stream};

/// Redraws allowed for a single-class bootstrap resample before it is skipped.
const MAX_REDRAWS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        check_dim(scores.len(), labels.len())?;
        if scores.is_empty() {
            return Err(invalid("scored set must not be empty"));
        }
        if labels.iter().any(|l| *l > 1) {
            return Err(invalid("labels must be 0 or 1"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(invalid("scores must be finite"));
        }
        Ok(Self { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|l| **l == 1).count();
        (pos, self.labels.len() - pos)
    }

    /// Indices sorted by descending score.
    fn descending(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx
    }
}

/// Which metric to compute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auroc,
    Aupr,
    F1,
}

impl Metric {
    pub fn eval(self, s: &ScoredSet, threshold: f64) -> Result<f64> {
        match self {
            Metric::Auroc => auroc(s),
            Metric::Aupr => aupr(s),
            Metric::F1 => Ok(f1(s, threshold)),
        }
    }
}

/// Mann–Whitney statistic with ties counted one half.
pub fn auroc(s: &ScoredSet) -> Result<f64> {
    let (pos, neg) = s.class_counts();
    if pos == 0 || neg == 0 {
        return Err(DpmmError::UndefinedMetric("AUROC needs both classes".into()));
    }
    let order = s.descending();
    // walk tie groups from the top; each positive beats every negative below its group
    let mut concordant = 0.0;
    let mut neg_below = neg as f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0.0, 0.0);
        while j < order.len() && s.scores[order[j]] == s.scores[order[i]] {
            if s.labels[order[j]] == 1 {
                gp += 1.0;
            } else {
                gn += 1.0;
            }
            j += 1;
        }
        neg_below -= gn;
        concordant += gp * neg_below + 0.5 * gp * gn;
        i = j;
    }
    Ok(concordant / (pos as f64 * neg as f64))
}

/// Average precision over tied score groups.
pub fn aupr(s: &ScoredSet) -> Result<f64> {
    let (pos, _) = s.class_counts();
    if pos == 0 {
        return Err(DpmmError::UndefinedMetric("AUPR needs at least one positive".into()));
    }
    let order = s.descending();
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut gp = 0.0;
        while j < order.len() && s.scores[order[j]] == s.scores[order[i]] {
            if s.labels[order[j]] == 1 {
                gp += 1.0;
            } else {
                fp += 1.0;
            }
            j += 1;
        }
        tp += gp;
        if gp > 0.0 {
            ap += (tp / (tp + fp)) * (gp / pos as f64);
        }
        i = j;
    }
    Ok(ap)
}

/// F1 at `ŷ ≥ threshold`; zero when there are no predicted or no actual positives.
pub fn f1(s: &ScoredSet, threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for (score, label) in s.scores.iter().zip(&s.labels) {
        match (*score >= threshold, *label == 1) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
            (false, false) => {}
        }
    }
    if tp == 0.0 {
        return 0.0;
    }
    2.0 * tp / (2.0 * tp + fp + fneg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    /// Resamples dropped after repeated single-class draws.
    pub skipped: usize,
}

/// Fewest bootstrap resamples accepted.
pub const MIN_RESAMPLES: usize = 100;

/// Percentile (2.5 %, 97.5 %) bootstrap interval over `resamples` seeded draws with replacement.
pub fn bootstrap_ci(s: &ScoredSet, metric: Metric, threshold: f64, resamples: usize, seed: u64) -> Result<Interval> {
    if resamples < MIN_RESAMPLES {
        return Err(invalid(format!("need at least {MIN_RESAMPLES} resamples, got {resamples}")));
    }
    let n = s.len();
    let needs_both = matches!(metric, Metric::Auroc);
    let needs_pos = matches!(metric, Metric::Aupr);
    let mut values = Vec::with_capacity(resamples);
    let mut skipped = 0;
    let mut undefined = 0;
    for b in 0..resamples {
        let mut r = rng::substream(seed, Stream::Bootstrap, b as u64);
        let mut drawn = None;
        for _ in 0..=MAX_REDRAWS {
            let idx: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            let sample = ScoredSet {
                scores: idx.iter().map(|&i| s.scores[i]).collect(),
                labels: idx.iter().map(|&i| s.labels[i]).collect(),
            };
            let (pos, neg) = sample.class_counts();
            if (needs_both && (pos == 0 || neg == 0)) || (needs_pos && pos == 0) {
                continue;
            }
            drawn = Some(sample);
            break;
        }
        match drawn {
            Some(sample) => match metric.eval(&sample, threshold) {
                Ok(v) => values.push(v),
                Err(_) => undefined += 1,
            },
            None => {
                skipped += 1;
                undefined += 1;
            }
        }
    }
    if undefined * 2 > resamples {
        return Err(DpmmError::CiFailure(format!(
            "metric undefined on {undefined} of {resamples} resamples"
        )));
    }
    values.sort_by(f64::total_cmp);
    Ok(Interval {
        lo: percentile(&values, 0.025),
        hi: percentile(&values, 0.975),
        skipped,
    })
}

/// Linear-interpolated percentile of sorted values.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Point estimates and bootstrap intervals for the three reported metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auroc: f64,
    pub aupr: f64,
    pub f1: f64,
    pub ci: CiReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiReport {
    pub auroc: Interval,
    pub aupr: Interval,
    pub f1: Interval,
    pub resamples: usize,
    pub level: f64,
}

pub fn report(s: &ScoredSet, threshold: f64, resamples: usize, seed: u64) -> Result<MetricReport> {
    Ok(MetricReport {
        auroc: auroc(s)?,
        aupr: aupr(s)?,
        f1: f1(s, threshold),
        ci: CiReport {
            auroc: bootstrap_ci(s, Metric::Auroc, threshold, resamples, seed)?,
            aupr: bootstrap_ci(s, Metric::Aupr, threshold, resamples, seed)?,
            f1: bootstrap_ci(s, Metric::F1, threshold, resamples, seed)?,
            resamples,
            level: 0.95,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(scores: &[f64], labels: &[u8]) -> ScoredSet {
        ScoredSet::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn auroc_cases() {
        assert_eq!(auroc(&set(&[0.9, 0.1], &[1, 0])).unwrap(), 1.0);
        assert_eq!(auroc(&set(&[0.5, 0.5], &[0, 1])).unwrap(), 0.5);
        assert_eq!(auroc(&set(&[0.1, 0.9], &[1, 0])).unwrap(), 0.0);
        assert!(matches!(auroc(&set(&[0.3, 0.4], &[1, 1])), Err(DpmmError::UndefinedMetric(_))));
    }

    #[test]
    fn aupr_cases() {
        assert_eq!(aupr(&set(&[0.9, 0.8, 0.1], &[1, 1, 0])).unwrap(), 1.0);
        let flat = aupr(&set(&[0.3; 8], &[1, 0, 0, 1, 0, 0, 0, 1])).unwrap();
        assert!((flat - 3.0 / 8.0).abs() < 1e-15);
        assert!(aupr(&set(&[0.3, 0.2], &[0, 0])).is_err());
    }

    #[test]
    fn f1_cases() {
        assert_eq!(f1(&set(&[0.9, 0.1], &[1, 0]), 0.5), 1.0);
        assert_eq!(f1(&set(&[0.2, 0.1], &[1, 0]), 0.5), 0.0);
        assert_eq!(f1(&set(&[0.2, 0.1], &[0, 0]), 0.5), 0.0);
        // TP=1, FP=1, FN=1
        assert_eq!(f1(&set(&[0.9, 0.8, 0.1], &[1, 0, 1]), 0.5), 0.5);
    }

    #[test]
    fn bootstrap_constant_metric() {
        let s = set(&[0.9, 0.8, 0.7, 0.2, 0.1, 0.05], &[1, 1, 1, 0, 0, 0]);
        let ci = bootstrap_ci(&s, Metric::Auroc, 0.5, 200, 1).unwrap();
        assert_eq!((ci.lo, ci.hi), (1.0, 1.0));
        assert!(bootstrap_ci(&s, Metric::Auroc, 0.5, 50, 1).is_err());
    }

    #[test]
    fn bootstrap_fails_when_mostly_undefined() {
        let mut labels = vec![0u8; 200];
        labels[0] = 1;
        let scores: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
        let s = set(&scores, &labels);
        // one positive in 200: a resample misses it with probability ~0.37, so retries rescue most
        assert!(bootstrap_ci(&s, Metric::Auroc, 0.5, 200, 3).is_ok());
        let single = set(&[0.1, 0.2], &[0, 0]);
        assert!(matches!(bootstrap_ci(&single, Metric::Auroc, 0.5, 100, 3), Err(DpmmError::CiFailure(_))));
    }

    #[test]
    fn bootstrap_is_seeded() {
        let s = set(&[0.9, 0.3, 0.6, 0.2, 0.8, 0.4], &[1, 0, 1, 0, 0, 1]);
        let a = bootstrap_ci(&s, Metric::Aupr, 0.5, 300, 8).unwrap();
        let b = bootstrap_ci(&s, Metric::Aupr, 0.5, 300, 8).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn auroc_invariant_under_monotone_transform(
            scores in proptest::collection::vec(0.0f64..1.0, 4..40),
            labels in proptest::collection::vec(0u8..2, 4..40),
        ) {
            let n = scores.len().min(labels.len());
            let (scores, labels) = (scores[..n].to_vec(), labels[..n].to_vec());
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let base = auroc(&set(&scores, &labels)).unwrap();
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert!((auroc(&set(&warped, &labels)).unwrap() - base).abs() < 1e-12);
            let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
            prop_assert!((auroc(&set(&scores, &flipped)).unwrap() - (1.0 - base)).abs() < 1e-12);
        }
    }
}
