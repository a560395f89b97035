//! Exact label posterior under the shifted-mean process.
//!
//! For instance `j` let `s_j` be the log density ratio between the shifted
//! and the background Gaussian, summed over the discriminative features.
//! Every term outside the window and every non-discriminative feature is
//! shared by both class-conditional likelihoods, so
//!
//! ```text
//! log p(h | y=1) - log p(h | y=0) = logsumexp_u(W_u) - log(S - R + 1),
//! W_u = s_u + ... + s_{u+R-1}
//! ```
//!
//! The bag size is observed and its (uniform) probability cancels from the
//! posterior. [`naive_log_odds`] evaluates the full product form without any
//! of these cancellations and is kept as an independent check.

use crate::datagen::{Bag, Dataset, GenParams};
use crate::error::{Error, Result};
use crate::eval::ScoredSet;
use crate::math::{logsumexp, normal_log_pdf, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayesModel {
    pub params: GenParams,
}

impl BayesModel {
    pub fn new(params: GenParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    fn check_bag(&self, bag: &Bag) -> Result<()> {
        if bag.num_features() != self.params.m() {
            return Err(Error::ShapeMismatch(format!(
                "bag has {} features, model expects {}",
                bag.num_features(),
                self.params.m()
            )));
        }
        if bag.num_instances() < self.params.r() {
            return Err(Error::BagTooShort { instances: bag.num_instances(), window: self.params.r() });
        }
        Ok(())
    }

    /// Prior log-odds `log(q / (1 - q))`; infinite for degenerate priors.
    pub fn prior_log_odds(&self) -> f64 {
        let q = self.params.q_pos;
        q.ln() - (-q).ln_1p()
    }

    /// Log density ratio of instance `j` (zero-based).
    pub fn instance_log_ratio(&self, bag: &Bag, j: usize) -> Result<f64> {
        if bag.num_features() != self.params.m() {
            return Err(Error::ShapeMismatch(format!(
                "bag has {} features, model expects {}",
                bag.num_features(),
                self.params.m()
            )));
        }
        if j >= bag.num_instances() {
            return Err(Error::IndexOutOfRange { index: j, len: bag.num_instances() });
        }
        Ok(self.instance_log_ratio_unchecked(bag.row(j)))
    }

    fn instance_log_ratio_unchecked(&self, row: &[f32]) -> f64 {
        let p = &self.params;
        let var = p.base_std * p.base_std;
        let slope = p.shift / var;
        let offset = p.shift * p.shift / (2.0 * var);
        row[..p.k()]
            .iter()
            .map(|&x| slope * (x as f64 - p.base_mean) - offset)
            .sum()
    }

    /// `log p(h | y=1) - log p(h | y=0)`.
    pub fn bag_log_likelihood_ratio(&self, bag: &Bag) -> Result<f64> {
        self.check_bag(bag)?;
        let r = self.params.r();
        let scores: Vec<f64> = bag.rows().map(|row| self.instance_log_ratio_unchecked(row)).collect();
        let windows = window_sums(&scores, r);
        Ok(logsumexp(&windows) - (windows.len() as f64).ln())
    }

    /// Posterior log-odds; `±inf` for degenerate priors.
    pub fn log_odds(&self, bag: &Bag) -> Result<f64> {
        let llr = self.bag_log_likelihood_ratio(bag)?;
        Ok(match self.params.q_pos {
            q if q == 0.0 => f64::NEG_INFINITY,
            q if q == 1.0 => f64::INFINITY,
            _ => llr + self.prior_log_odds(),
        })
    }

    /// `p(y = 1 | bag)`.
    pub fn posterior(&self, bag: &Bag) -> Result<f64> {
        let log_odds = self.log_odds(bag)?;
        // identical class likelihoods: hand back the prior without rounding
        if !self.params.has_signal() {
            return Ok(self.params.q_pos);
        }
        Ok(sigmoid(log_odds))
    }

    pub fn score_dataset(&self, ds: &Dataset) -> Result<ScoredSet> {
        self.score_with(ds, |bag| self.posterior(bag))
    }

    /// Like [`score_dataset`](Self::score_dataset) but reports log-odds,
    /// which never saturate.
    pub fn score_dataset_log_odds(&self, ds: &Dataset) -> Result<ScoredSet> {
        self.score_with(ds, |bag| self.log_odds(bag))
    }

    fn score_with(&self, ds: &Dataset, f: impl Fn(&Bag) -> Result<f64> + Sync) -> Result<ScoredSet> {
        use rayon::prelude::*;
        if ds.params.m() != self.params.m() || ds.params.k() != self.params.k() || ds.params.r() != self.params.r() {
            return Err(Error::ShapeMismatch(format!(
                "dataset (M={}, K={}, R={}) does not match model (M={}, K={}, R={})",
                ds.params.m(),
                ds.params.k(),
                ds.params.r(),
                self.params.m(),
                self.params.k(),
                self.params.r()
            )));
        }
        let scores = ds.bags.par_iter().map(&f).collect::<Result<Vec<_>>>()?;
        Ok(ScoredSet::with_ids(
            ds.bags.iter().map(|b| b.id).collect(),
            ds.labels(),
            scores,
        ))
    }
}

/// Sums of every run of `r` consecutive entries.
pub fn window_sums(xs: &[f64], r: usize) -> Vec<f64> {
    xs.windows(r).map(|w| w.iter().sum()).collect()
}

/// Class-conditional log-likelihoods `(log p(h | y=0), log p(h | y=1))`
/// computed as full sums of per-entry Normal log densities.
pub fn naive_class_log_likelihoods(model: &BayesModel, bag: &Bag) -> Result<(f64, f64)> {
    model.check_bag(bag)?;
    let p = &model.params;
    let (s, m, k, r) = (bag.num_instances(), p.m(), p.k(), p.r());
    let mu = p.base_mean;
    let sd = p.base_std;

    let mut log_neg = 0.0;
    for row in bag.rows() {
        for &x in row {
            log_neg += normal_log_pdf(x as f64, mu, sd);
        }
    }

    let n_starts = s - r + 1;
    let per_start: Vec<f64> = (0..n_starts)
        .map(|u| {
            let mut total = -(n_starts as f64).ln();
            for j in 0..s {
                let row = bag.row(j);
                for f in 0..m {
                    let shifted = j >= u && j < u + r && f < k;
                    let mean = if shifted { mu + p.shift } else { mu };
                    total += normal_log_pdf(row[f] as f64, mean, sd);
                }
            }
            total
        })
        .collect();
    Ok((log_neg, logsumexp(&per_start)))
}

/// Slow product-form log-odds.
pub fn naive_log_odds(model: &BayesModel, bag: &Bag) -> Result<f64> {
    let (log_neg, log_pos) = naive_class_log_likelihoods(model, bag)?;
    let q = model.params.q_pos;
    Ok((log_pos + q.ln()) - (log_neg + (-q).ln_1p()))
}

/// Slow product-form posterior via the sum rule.
pub fn naive_posterior(model: &BayesModel, bag: &Bag) -> Result<f64> {
    let (log_neg, log_pos) = naive_class_log_likelihoods(model, bag)?;
    let q = model.params.q_pos;
    let joint_pos = log_pos + q.ln();
    let joint_neg = log_neg + (-q).ln_1p();
    if q == 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        return Ok(1.0);
    }
    if model.params.shift == 0.0 {
        return Ok(q);
    }
    Ok((joint_pos - logsumexp(&[joint_neg, joint_pos])).exp())
}
