//! Hand-set parameters that turn each pipeline into a known-good detector.
//!
//! The scorer puts weight one on every discriminative feature and zero
//! elsewhere, with a bias that places the decision boundary halfway between
//! the background mean and the shifted mean. Context variants first sum each
//! instance with its neighbours using a kernel of `R` ones, so the pooled
//! quantity becomes a window score; their bias is scaled by `R` accordingly.
//! Attention variants use the near-linear part of `tanh` so attention is a
//! softmax of the linear score.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{LinearScorer, ModelSpec, Order, Pooling};
use crate::datagen::GenParams;
use crate::error::{Error, Result};
use crate::pooling::{AbmilParams, AttnParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HandcraftedKind {
    /// Prediction aggregation, max over instance scores.
    InstanceMax,
    /// Prediction aggregation, mean of instance probabilities.
    InstanceMean,
    EmbeddingMax,
    EmbeddingMean,
    /// Window-sum convolution, then embedding max pooling.
    ContextConv,
    /// ABMIL with `U = eps * w` and `u = 1 / eps`.
    Abmil { eps: f64 },
    AbmilConv { eps: f64 },
    /// Class-token self-attention whose logits are `temperature * w . h_j`.
    SelfAttention { temperature: f64 },
    SelfAttentionConv { temperature: f64 },
}

impl HandcraftedKind {
    pub const DEFAULT_EPS: f64 = 1e-3;
    pub const DEFAULT_TEMPERATURE: f64 = 4.0;

    pub fn name(&self) -> &'static str {
        match self {
            HandcraftedKind::InstanceMax => "instance-max",
            HandcraftedKind::InstanceMean => "instance-mean",
            HandcraftedKind::EmbeddingMax => "embedding-max",
            HandcraftedKind::EmbeddingMean => "embedding-mean",
            HandcraftedKind::ContextConv => "context-conv",
            HandcraftedKind::Abmil { .. } => "abmil",
            HandcraftedKind::AbmilConv { .. } => "abmil-conv",
            HandcraftedKind::SelfAttention { .. } => "self-attention",
            HandcraftedKind::SelfAttentionConv { .. } => "self-attention-conv",
        }
    }

    pub fn all() -> Vec<HandcraftedKind> {
        let eps = Self::DEFAULT_EPS;
        let temperature = Self::DEFAULT_TEMPERATURE;
        vec![
            HandcraftedKind::InstanceMax,
            HandcraftedKind::InstanceMean,
            HandcraftedKind::EmbeddingMax,
            HandcraftedKind::EmbeddingMean,
            HandcraftedKind::ContextConv,
            HandcraftedKind::Abmil { eps },
            HandcraftedKind::AbmilConv { eps },
            HandcraftedKind::SelfAttention { temperature },
            HandcraftedKind::SelfAttentionConv { temperature },
        ]
    }

    pub fn uses_context(&self) -> bool {
        matches!(
            self,
            HandcraftedKind::ContextConv | HandcraftedKind::AbmilConv { .. } | HandcraftedKind::SelfAttentionConv { .. }
        )
    }
}

impl fmt::Display for HandcraftedKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HandcraftedKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        HandcraftedKind::all()
            .into_iter()
            .find(|k| k.name() == s.replace('_', "-"))
            .ok_or_else(|| {
                let names: Vec<_> = HandcraftedKind::all().iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown handcrafted kind {s:?} (expected one of {})", names.join(", ")))
            })
    }
}

/// Kernel summing `r` consecutive instances.
///
/// Odd `r` gives `r` centred ones. Even `r` needs an odd length, so the
/// kernel has `r + 1` taps with the last one zero.
pub fn window_kernel(r: usize) -> Vec<f64> {
    let len = if r % 2 == 1 { r } else { r + 1 };
    (0..len).map(|t| if t < r { 1.0 } else { 0.0 }).collect()
}

fn indicator(params: &GenParams) -> Array1<f64> {
    Array1::from_shape_fn(params.m(), |m| if m < params.k() { 1.0 } else { 0.0 })
}

/// Builds the handcrafted pipeline of the given kind.
pub fn handcrafted_model(params: &GenParams, kind: HandcraftedKind) -> Result<ModelSpec> {
    params.validate()?;
    let (k, r) = (params.k() as f64, params.r() as f64);
    let w = indicator(params);
    // Boundary halfway between the background and the shifted mean.
    let instance_bias = -k * (params.base_mean + params.shift / 2.0);
    let scorer = |b: f64| LinearScorer { w: w.clone(), b };
    let abmil = |eps: f64| -> Result<Pooling> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParams(format!("eps must be positive, got {eps}")));
        }
        let proj = w.clone().insert_axis(ndarray::Axis(0)) * eps;
        Ok(Pooling::Abmil(AbmilParams::new(proj, Array1::from(vec![1.0 / eps]))?))
    };

    let spec = match kind {
        HandcraftedKind::InstanceMax => ModelSpec::new(Order::PredictionAggregation, Pooling::Max, scorer(instance_bias)),
        HandcraftedKind::InstanceMean => ModelSpec::new(Order::PredictionAggregation, Pooling::Mean, scorer(instance_bias)),
        HandcraftedKind::EmbeddingMax => ModelSpec::new(Order::EmbeddingAggregation, Pooling::Max, scorer(instance_bias)),
        HandcraftedKind::EmbeddingMean => ModelSpec::new(Order::EmbeddingAggregation, Pooling::Mean, scorer(instance_bias)),
        HandcraftedKind::ContextConv => {
            ModelSpec::new(Order::EmbeddingAggregation, Pooling::Max, scorer(r * instance_bias))
                .with_kernel(window_kernel(params.r()))
        }
        HandcraftedKind::Abmil { eps } => {
            ModelSpec::new(Order::EmbeddingAggregation, abmil(eps)?, scorer(instance_bias))
        }
        HandcraftedKind::AbmilConv { eps } => {
            ModelSpec::new(Order::EmbeddingAggregation, abmil(eps)?, scorer(r * instance_bias))
                .with_kernel(window_kernel(params.r()))
        }
        HandcraftedKind::SelfAttention { temperature } => attention_model(params, temperature, 1.0)?,
        HandcraftedKind::SelfAttentionConv { temperature } => {
            attention_model(params, temperature, r)?.with_kernel(window_kernel(params.r()))
        }
    };
    Ok(spec)
}

/// One-dimensional head: keys and values are the linear score `w . x`, and
/// the class token's query is the constant `temperature`. The class token
/// reads as a background instance (score `k * mu * gain`), and its last
/// feature, which must be non-discriminative, carries the query.
fn attention_model(params: &GenParams, temperature: f64, gain: f64) -> Result<ModelSpec> {
    let (m, k) = (params.m(), params.k());
    if k == m {
        return Err(Error::Unsupported(
            "handcrafted self-attention needs at least one non-discriminative feature".into(),
        ));
    }
    if !temperature.is_finite() {
        return Err(Error::InvalidParams(format!("temperature must be finite, got {temperature}")));
    }
    let w = indicator(params);
    let w_row = w.clone().insert_axis(ndarray::Axis(0));
    let mut w_q = Array2::zeros((1, m));
    w_q[[0, m - 1]] = temperature;
    let mut class_token = Array1::zeros(m);
    for f in 0..k {
        class_token[f] = params.base_mean * gain;
    }
    class_token[m - 1] = 1.0;
    let attn = AttnParams { w_q, w_k: w_row.clone(), w_v: w_row, class_token };
    let bias = -(k as f64) * gain * (params.base_mean + params.shift / 2.0);
    Ok(ModelSpec::new(
        Order::EmbeddingAggregation,
        Pooling::SelfAttention(attn),
        LinearScorer { w: Array1::from(vec![1.0]), b: bias },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Bag;

    fn one_feature(x: f32) -> Bag {
        Bag::new(0, false, None, 1, vec![x]).unwrap()
    }

    #[test]
    fn instance_logits_at_class_means() {
        let p = GenParams { num_features: 1, s_low: 1, s_high: 1, window: 1, ..GenParams::default() };
        let spec = handcrafted_model(&p, HandcraftedKind::InstanceMax).unwrap();
        assert_eq!(spec.log_odds(&one_feature(0.0)).unwrap(), -1.0);
        assert_eq!(spec.log_odds(&one_feature(2.0)).unwrap(), 1.0);
    }

    #[test]
    fn general_mean_bias_is_centred() {
        let p = GenParams { base_mean: 3.0, shift: 2.0, num_features: 1, s_low: 1, s_high: 1, window: 1, ..GenParams::default() };
        let spec = handcrafted_model(&p, HandcraftedKind::InstanceMax).unwrap();
        assert_eq!(spec.log_odds(&one_feature(4.0)).unwrap(), 0.0);
    }

    #[test]
    fn kernels() {
        assert_eq!(window_kernel(1), vec![1.0]);
        assert_eq!(window_kernel(3), vec![1.0; 3]);
        assert_eq!(window_kernel(2), vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn context_conv_structure() {
        let p = GenParams::default();
        let spec = handcrafted_model(&p, HandcraftedKind::ContextConv).unwrap();
        assert_eq!(spec.kernel.as_deref(), Some(&[1.0, 1.0, 1.0][..]));
        assert_eq!(spec.scorer.b, -3.0);
        assert_eq!(spec.scorer.w.sum(), 1.0);
        assert_eq!(spec.scorer.w[0], 1.0);
    }

    #[test]
    fn every_kind_builds_and_round_trips_names() {
        let p = GenParams { num_features: 8, num_discriminative: 2, ..GenParams::default() };
        for kind in HandcraftedKind::all() {
            let spec = handcrafted_model(&p, kind).unwrap();
            spec.check(8).unwrap();
            let parsed: HandcraftedKind = kind.name().parse().unwrap();
            assert_eq!(parsed.name(), kind.name());
        }
        assert!("median".parse::<HandcraftedKind>().is_err());
    }

    #[test]
    fn attention_needs_spare_feature() {
        let p = GenParams { num_features: 1, ..GenParams::default() };
        assert!(handcrafted_model(&p, HandcraftedKind::SelfAttention { temperature: 1.0 }).is_err());
    }
}
