//! Ranking metrics and significance testing.

mod sweep;

pub use sweep::{
    sweep_delta, sweep_training_size, write_results_csv, ResultRow, SweepModel, SweepSettings,
};

use std::cmp::Ordering;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labels and scores of one method on one evaluation set, aligned by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredSet {
    pub ids: Vec<u64>,
    pub labels: Vec<bool>,
    pub scores: Vec<f64>,
}

impl ScoredSet {
    /// Ids default to positions.
    pub fn new(labels: Vec<bool>, scores: Vec<f64>) -> Self {
        let ids = (0..labels.len() as u64).collect();
        Self::with_ids(ids, labels, scores)
    }

    pub fn with_ids(ids: Vec<u64>, labels: Vec<bool>, scores: Vec<f64>) -> Self {
        assert_eq!(labels.len(), scores.len(), "labels and scores must align");
        assert_eq!(ids.len(), scores.len(), "ids and scores must align");
        Self { ids, labels, scores }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn map_scores(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self { ids: self.ids.clone(), labels: self.labels.clone(), scores: self.scores.iter().map(|&s| f(s)).collect() }
    }

    /// CSV with columns `bag_id,label,score`, scores to 17 significant digits.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["bag_id", "label", "score"])?;
        for i in 0..self.len() {
            w.write_record([
                self.ids[i].to_string(),
                (self.labels[i] as u8).to_string(),
                format!("{:.16e}", self.scores[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out = ScoredSet::default();
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).ok_or_else(|| Error::Corrupt(format!("short score row {rec:?}")));
            let parse_err = |e: &dyn std::fmt::Display| Error::Corrupt(format!("score row {rec:?}: {e}"));
            out.ids.push(field(0)?.parse().map_err(|e| parse_err(&e))?);
            out.labels.push(match field(1)? {
                "0" => false,
                "1" => true,
                other => return Err(Error::Corrupt(format!("label {other:?}"))),
            });
            out.scores.push(field(2)?.parse().map_err(|e| parse_err(&e))?);
        }
        Ok(out)
    }
}

/// Average (fractional) ranks, one-based, of `scores`.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].total_cmp(&scores[order[i]]) == Ordering::Equal {
            j += 1;
        }
        // positions i..=j share the mean of ranks i+1..=j+1
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve as the normalized Mann–Whitney U statistic.
/// Tied positive/negative pairs count one half.
pub fn auroc(s: &ScoredSet) -> Result<f64> {
    auroc_parts(&s.labels, &s.scores)
}

fn auroc_parts(labels: &[bool], scores: &[f64]) -> Result<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass { positives, negatives });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParams("AUROC scores contain NaN".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let np = positives as f64;
    let u = rank_sum - np * (np + 1.0) / 2.0;
    Ok(u / (np * negatives as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub mean_diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_resamples: usize,
    pub seed: u64,
}

impl BootstrapResult {
    pub fn excludes_zero(&self) -> bool {
        self.ci_low > 0.0 || self.ci_high < 0.0
    }
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 100]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Paired bootstrap of `AUROC(a) - AUROC(b)`.
///
/// Each resample draws `n` indices with replacement and evaluates both
/// methods on the same indices; resamples containing a single class are
/// redrawn. Reports the mean difference and the 2.5/97.5 percentiles.
pub fn paired_bootstrap(a: &ScoredSet, b: &ScoredSet, n_resamples: usize, seed: u64) -> Result<BootstrapResult> {
    if a.len() != b.len() || a.labels != b.labels {
        return Err(Error::ShapeMismatch("paired bootstrap needs two scorings of the same labeled set".into()));
    }
    if n_resamples == 0 {
        return Err(Error::InvalidParams("n_resamples must be at least 1".into()));
    }
    // Fails early (and with the right error) when a class is missing.
    auroc(a)?;
    auroc(b)?;

    let n = a.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = vec![false; n];
    let mut sa = vec![0.0; n];
    let mut sb = vec![0.0; n];
    let mut diffs = Vec::with_capacity(n_resamples);
    while diffs.len() < n_resamples {
        for i in 0..n {
            let k = rng.random_range(0..n);
            labels[i] = a.labels[k];
            sa[i] = a.scores[k];
            sb[i] = b.scores[k];
        }
        let pos = labels.iter().filter(|&&l| l).count();
        if pos == 0 || pos == n {
            continue;
        }
        diffs.push(auroc_parts(&labels, &sa)? - auroc_parts(&labels, &sb)?);
    }
    let mean_diff = diffs.iter().sum::<f64>() / diffs.len() as f64;
    diffs.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        mean_diff,
        ci_low: percentile(&diffs, 2.5),
        ci_high: percentile(&diffs, 97.5),
        n_resamples,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(labels: &[u8], scores: &[f64]) -> ScoredSet {
        ScoredSet::new(labels.iter().map(|&l| l == 1).collect(), scores.to_vec())
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&set(&[0, 1], &[0.1, 0.9])).unwrap(), 1.0);
        assert_eq!(auroc(&set(&[0, 1, 1, 0], &[0.3; 4])).unwrap(), 0.5);
        // pairs (pos, neg): (0.4,0.2) win, (0.4,0.8) loss, (0.9,0.2) win, (0.9,0.8) win
        assert_eq!(auroc(&set(&[0, 0, 1, 1], &[0.2, 0.8, 0.4, 0.9])).unwrap(), 0.75);
    }

    #[test]
    fn auroc_single_class() {
        assert!(matches!(auroc(&set(&[1, 1], &[0.2, 0.3])), Err(Error::SingleClass { positives: 2, negatives: 0 })));
        assert!(matches!(auroc(&set(&[], &[])), Err(Error::SingleClass { .. })));
    }

    #[test]
    fn average_ranks_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.0), 0.0);
        assert_eq!(percentile(&v, 50.0), 2.0);
        assert_eq!(percentile(&v, 100.0), 4.0);
        assert!((percentile(&v, 2.5) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn bootstrap_identical_is_zero() {
        let s = set(&[0, 1, 0, 1, 1, 0], &[0.1, 0.7, 0.4, 0.35, 0.9, 0.2]);
        let r = paired_bootstrap(&s, &s, 200, 7).unwrap();
        assert_eq!((r.mean_diff, r.ci_low, r.ci_high), (0.0, 0.0, 0.0));
        assert_eq!(r.n_resamples, 200);
        assert_eq!(r, paired_bootstrap(&s, &s, 200, 7).unwrap());
    }

    #[test]
    fn bootstrap_rejects_mismatch() {
        let a = set(&[0, 1], &[0.1, 0.7]);
        let b = set(&[1, 0], &[0.1, 0.7]);
        assert!(paired_bootstrap(&a, &b, 10, 0).is_err());
        assert!(paired_bootstrap(&a, &a, 0, 0).is_err());
        let c = set(&[1, 1], &[0.1, 0.7]);
        assert!(matches!(paired_bootstrap(&c, &c, 10, 0), Err(Error::SingleClass { .. })));
    }

    #[test]
    fn scores_csv_round_trip() {
        let s = ScoredSet::with_ids(vec![4, 9], vec![true, false], vec![0.1 + 0.2, 1e-300]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        s.write_csv(&path).unwrap();
        assert_eq!(ScoredSet::read_csv(&path).unwrap(), s);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("bag_id,label,score\n4,1,3.0000000000000004e-1"));
    }
}
