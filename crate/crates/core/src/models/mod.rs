//! Pipelines assembled from an instance scorer and a pooling operator.
//!
//! In prediction aggregation each instance is scored first and the scores
//! are pooled; in embedding aggregation the embeddings are pooled first and
//! the pooled vector is scored. An optional fixed kernel convolves the
//! embeddings along the instance axis before anything else.

mod handcrafted;
mod train;

pub use handcrafted::{handcrafted_model, window_kernel, HandcraftedKind};
pub use train::{
    grid_search, loss_and_grad, train, EpochRecord, GridOutcome, Gradient, TrainConfig, TrainLog,
    LEARNING_RATE_GRID, WEIGHT_DECAY_GRID,
};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::datagen::{Bag, Dataset};
use crate::error::{Error, Result};
use crate::eval::ScoredSet;
use crate::math::{log_sigmoid, logsumexp, sigmoid};
use crate::pooling::{self, AbmilParams, AttnParams, EmbeddingBag, SmoothConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    /// Score instances, then pool the scores.
    PredictionAggregation,
    /// Pool embeddings, then score the pooled vector.
    EmbeddingAggregation,
}

impl Order {
    pub const ALL: [Order; 2] = [Order::PredictionAggregation, Order::EmbeddingAggregation];

    pub fn as_str(&self) -> &'static str {
        match self {
            Order::PredictionAggregation => "prediction",
            Order::EmbeddingAggregation => "embedding",
        }
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Order {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prediction" | "prediction_aggregation" | "prediction-aggregation" => Ok(Order::PredictionAggregation),
            "embedding" | "embedding_aggregation" | "embedding-aggregation" => Ok(Order::EmbeddingAggregation),
            other => Err(Error::Config(format!("unknown order {other:?} (expected prediction or embedding)"))),
        }
    }
}

/// `sigmoid(w . x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScorer {
    pub w: Array1<f64>,
    pub b: f64,
}

impl LinearScorer {
    pub fn new(w: Array1<f64>, b: f64) -> Result<Self> {
        if w.iter().any(|x| !x.is_finite()) || !b.is_finite() {
            return Err(Error::InvalidParams("scorer parameters must be finite".into()));
        }
        Ok(Self { w, b })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { w: Array1::zeros(dim), b: 0.0 }
    }

    pub fn logit(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.w.dot(&x) + self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pooling {
    Max,
    Mean,
    /// `log(mean(exp(.)))` over instances.
    #[serde(rename = "logsumexp")]
    LogSumExp,
    Abmil(AbmilParams),
    SmoothMean(SmoothConfig),
    SmoothMax(SmoothConfig),
    SelfAttention(AttnParams),
}

impl Pooling {
    pub fn name(&self) -> &'static str {
        match self {
            Pooling::Max => "max",
            Pooling::Mean => "mean",
            Pooling::LogSumExp => "logsumexp",
            Pooling::Abmil(_) => "abmil",
            Pooling::SmoothMean(_) => "smooth_mean",
            Pooling::SmoothMax(_) => "smooth_max",
            Pooling::SelfAttention(_) => "self_attention",
        }
    }

    /// Parameter-free poolings by name; smoothing takes `alpha`.
    pub fn from_name(name: &str, alpha: f64) -> Result<Self> {
        Ok(match name.replace('-', "_").as_str() {
            "max" => Pooling::Max,
            "mean" => Pooling::Mean,
            "logsumexp" | "lse" => Pooling::LogSumExp,
            "smooth_mean" => Pooling::SmoothMean(SmoothConfig::chain(alpha)?),
            "smooth_max" => Pooling::SmoothMax(SmoothConfig::chain(alpha)?),
            "abmil" | "self_attention" => {
                return Err(Error::Unsupported(format!(
                    "pooling {name:?} has no default parameters; use a handcrafted kind"
                )))
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown pooling {other:?} (expected one of max, mean, logsumexp, smooth_mean, smooth_max)"
                )))
            }
        })
    }

    pub fn smooth_config(&self) -> Option<&SmoothConfig> {
        match self {
            Pooling::SmoothMean(c) | Pooling::SmoothMax(c) => Some(c),
            _ => None,
        }
    }

    /// Poolings [`loss_and_grad`] can differentiate.
    pub fn is_trainable(&self) -> bool {
        matches!(
            self,
            Pooling::Max | Pooling::Mean | Pooling::LogSumExp | Pooling::SmoothMean(_) | Pooling::SmoothMax(_)
        )
    }
}

/// A complete bag classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub order: Order,
    #[serde(flatten)]
    pub pooling: Pooling,
    #[serde(flatten)]
    pub scorer: LinearScorer,
    /// Fixed odd-length kernel convolved over instances before pooling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Vec<f64>>,
}

impl ModelSpec {
    pub fn new(order: Order, pooling: Pooling, scorer: LinearScorer) -> Self {
        Self { order, pooling, scorer, kernel: None }
    }

    pub fn with_kernel(mut self, kernel: Vec<f64>) -> Self {
        self.kernel = Some(kernel);
        self
    }

    /// Short label such as `prediction/max` or `embedding/max+conv3`.
    pub fn label(&self) -> String {
        format!("{}/{}", self.order, self.pooling_label())
    }

    /// Pooling name with a `+conv<len>` suffix when a kernel is present.
    pub fn pooling_label(&self) -> String {
        let conv = self.kernel.as_ref().map(|k| format!("+conv{}", k.len())).unwrap_or_default();
        format!("{}{}", self.pooling.name(), conv)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Length the scorer must have for bags with `m` features.
    pub fn scorer_dim(&self, m: usize) -> usize {
        match (&self.order, &self.pooling) {
            (Order::EmbeddingAggregation, Pooling::SelfAttention(p)) => p.head_dim(),
            _ => m,
        }
    }

    pub fn check(&self, m: usize) -> Result<()> {
        let want = self.scorer_dim(m);
        if self.scorer.w.len() != want {
            return Err(Error::ShapeMismatch(format!(
                "{} scorer has {} weights, expected {want}",
                self.label(),
                self.scorer.w.len()
            )));
        }
        if let Some(c) = self.pooling.smooth_config() {
            c.validate()?;
        }
        if let Some(k) = &self.kernel {
            if k.is_empty() || k.len() % 2 == 0 {
                return Err(Error::InvalidParams(format!("kernel length {} is not odd", k.len())));
            }
        }
        match (&self.order, &self.pooling) {
            (Order::PredictionAggregation, Pooling::SelfAttention(_)) => Err(Error::Unsupported(
                "self-attention pooling is only defined for embedding aggregation".into(),
            )),
            (_, Pooling::SelfAttention(p)) => p.check(m),
            (_, Pooling::Abmil(p)) if p.proj.ncols() != m => Err(Error::ShapeMismatch(format!(
                "ABMIL projection expects {} features, bag has {m}",
                p.proj.ncols()
            ))),
            _ => Ok(()),
        }
    }

    /// Embeddings after the optional convolution.
    pub fn prepare(&self, bag: &Bag) -> Result<EmbeddingBag> {
        let h = EmbeddingBag::from_bag(bag);
        match &self.kernel {
            Some(k) => pooling::conv_over_instances(&h, k),
            None => Ok(h),
        }
    }

    /// `log(p / (1 - p))` of the bag prediction, computed without passing
    /// through a saturating probability.
    pub fn log_odds(&self, bag: &Bag) -> Result<f64> {
        self.check(bag.num_features())?;
        let h = self.prepare(bag)?;
        let s = h.num_instances() as f64;
        let sc = &self.scorer;
        match self.order {
            Order::PredictionAggregation => {
                let h = match self.pooling.smooth_config() {
                    Some(cfg) => pooling::smooth(&h, cfg)?,
                    None => h,
                };
                let logits: Vec<f64> = h.view().rows().into_iter().map(|r| sc.logit(r)).collect();
                Ok(match &self.pooling {
                    Pooling::Max | Pooling::SmoothMax(_) => logits.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    Pooling::LogSumExp => logsumexp(&logits) - s.ln(),
                    Pooling::Mean | Pooling::SmoothMean(_) => mixture_log_odds(&logits, None),
                    Pooling::Abmil(p) => {
                        let a = pooling::abmil_weights(&h, p)?;
                        mixture_log_odds(&logits, Some(a.as_slice().expect("contiguous")))
                    }
                    Pooling::SelfAttention(_) => unreachable!("rejected by check"),
                })
            }
            Order::EmbeddingAggregation => {
                let z = match &self.pooling {
                    Pooling::Max => pooling::max_pool(&h),
                    Pooling::Mean => pooling::mean_pool(&h),
                    Pooling::LogSumExp => pooling::logsumexp_pool(&h),
                    Pooling::SmoothMean(cfg) => pooling::mean_pool(&pooling::smooth(&h, cfg)?),
                    Pooling::SmoothMax(cfg) => pooling::max_pool(&pooling::smooth(&h, cfg)?),
                    Pooling::Abmil(p) => pooling::abmil_pool(&h, p)?.0,
                    Pooling::SelfAttention(p) => pooling::self_attention_forward(&h, p)?.0,
                };
                Ok(sc.logit(z.view()))
            }
        }
    }

    /// Bag probability in `[0, 1]`.
    pub fn forward(&self, bag: &Bag) -> Result<f64> {
        Ok(sigmoid(self.log_odds(bag)?))
    }

    pub fn score_dataset(&self, ds: &Dataset) -> Result<ScoredSet> {
        use rayon::prelude::*;
        let scores = ds.bags.par_iter().map(|b| self.log_odds(b)).collect::<Result<Vec<_>>>()?;
        Ok(ScoredSet::with_ids(ds.bags.iter().map(|b| b.id).collect(), ds.labels(), scores))
    }
}

/// Log-odds of `p = sum_j weight_j * sigmoid(logit_j)` (uniform weights when
/// `weights` is `None`).
pub(crate) fn mixture_log_odds(logits: &[f64], weights: Option<&[f64]>) -> f64 {
    let n = logits.len() as f64;
    let lw = |j: usize| weights.map_or(-n.ln(), |w| w[j].ln());
    let pos: Vec<f64> = logits.iter().enumerate().map(|(j, &l)| lw(j) + log_sigmoid(l)).collect();
    let neg: Vec<f64> = logits.iter().enumerate().map(|(j, &l)| lw(j) + log_sigmoid(-l)).collect();
    logsumexp(&pos) - logsumexp(&neg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{sample_dataset, GenParams};
    use ndarray::array;

    fn bag(rows: &[&[f32]]) -> Bag {
        let m = rows[0].len();
        Bag::new(0, false, None, m, rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    fn spec(order: Order, pooling: Pooling, w: Array1<f64>, b: f64) -> ModelSpec {
        ModelSpec::new(order, pooling, LinearScorer::new(w, b).unwrap())
    }

    #[test]
    fn single_instance_orders_coincide() {
        let b = bag(&[&[0.7, -1.2]]);
        for pooling in [Pooling::Max, Pooling::Mean, Pooling::LogSumExp] {
            let p = spec(Order::PredictionAggregation, pooling.clone(), array![1.5, 0.3], -0.2).forward(&b).unwrap();
            let e = spec(Order::EmbeddingAggregation, pooling, array![1.5, 0.3], -0.2).forward(&b).unwrap();
            assert!((p - e).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_orders_differ_off_symmetry() {
        // logits (c, -c) give 0.5 under both orders for every c, so the
        // Jensen gap only shows with asymmetric logits such as (3, 0).
        let sym = bag(&[&[2.0], &[-2.0]]);
        let pred = spec(Order::PredictionAggregation, Pooling::Mean, array![1.0], 0.0);
        let emb = spec(Order::EmbeddingAggregation, Pooling::Mean, array![1.0], 0.0);
        assert!((pred.forward(&sym).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(emb.forward(&sym).unwrap(), 0.5);

        let asym = bag(&[&[3.0], &[0.0]]);
        let p = pred.forward(&asym).unwrap();
        let e = emb.forward(&asym).unwrap();
        assert!((p - 0.5 * (sigmoid(3.0) + 0.5)).abs() < 1e-14);
        assert!((e - sigmoid(1.5)).abs() < 1e-15);
        assert!(e - p > 0.05);
    }

    #[test]
    fn mixture_log_odds_matches_direct() {
        let logits = [0.3, -2.0, 4.0];
        let p: f64 = logits.iter().map(|&l| sigmoid(l)).sum::<f64>() / 3.0;
        assert!((mixture_log_odds(&logits, None) - (p / (1.0 - p)).ln()).abs() < 1e-12);
        let w = [0.2, 0.5, 0.3];
        let p: f64 = logits.iter().zip(&w).map(|(&l, &a)| a * sigmoid(l)).sum();
        assert!((mixture_log_odds(&logits, Some(&w)) - (p / (1.0 - p)).ln()).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let b = bag(&[&[0.7, -1.2]]);
        let s = spec(Order::PredictionAggregation, Pooling::Max, array![1.0], 0.0);
        assert!(matches!(s.forward(&b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn json_round_trip() {
        let s = spec(
            Order::EmbeddingAggregation,
            Pooling::SmoothMax(SmoothConfig::chain(0.4).unwrap()),
            array![1.0, 0.0, -0.5],
            -1.0,
        )
        .with_kernel(vec![1.0, 1.0, 1.0]);
        let json = s.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["kind"], "smooth_max");
        assert_eq!(v["order"], "embedding_aggregation");
        assert_eq!(v["b"], -1.0);
        assert_eq!(ModelSpec::from_json(&json).unwrap(), s);

        let a = spec(
            Order::EmbeddingAggregation,
            Pooling::Abmil(AbmilParams::new(array![[0.1, 0.2, 0.0]], array![3.0]).unwrap()),
            array![1.0, 0.0, 0.0],
            0.0,
        );
        assert_eq!(ModelSpec::from_json(&a.to_json().unwrap()).unwrap(), a);
    }

    #[test]
    fn pooling_names() {
        for name in ["max", "mean", "logsumexp", "smooth_mean", "smooth-max"] {
            let p = Pooling::from_name(name, 0.5).unwrap();
            assert_eq!(p.name(), name.replace('-', "_"));
        }
        assert!(matches!(Pooling::from_name("median", 0.5), Err(Error::Config(_))));
        assert!(Pooling::from_name("abmil", 0.5).is_err());
    }

    #[test]
    fn max_and_mean_are_permutation_invariant() {
        let p = GenParams { num_features: 3, s_low: 4, s_high: 6, window: 2, ..GenParams::default() };
        let ds = sample_dataset(&p, 10).unwrap();
        let w = array![1.0, -0.3, 0.2];
        for bag in &ds.bags {
            let s = bag.num_instances();
            let mut feats = Vec::new();
            for j in (0..s).rev() {
                feats.extend_from_slice(bag.row(j));
            }
            let rev = Bag::new(bag.id, bag.label, bag.window_start.map(|u| s - p.r() - u), 3, feats).unwrap();
            for order in Order::ALL {
                for pooling in [Pooling::Max, Pooling::Mean, Pooling::LogSumExp] {
                    let m = spec(order, pooling, w.clone(), 0.1);
                    assert!((m.forward(bag).unwrap() - m.forward(&rev).unwrap()).abs() < 1e-12);
                }
            }
        }
    }
}
