//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use milbench::math::log_sigmoid;
use milbench::models::loss_and_grad;
use milbench::pooling::SmoothConfig;
use milbench::{Bag, LinearScorer, ModelSpec, Order, Pooling};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force AUROC: win fraction over every positive/negative pair.
pub fn brute_auroc(labels: &[bool], scores: &[f64]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Loss recomputed from the forward pass alone.
pub fn oracle_loss(spec: &ModelSpec, bags: &[Bag], weight_decay: f64) -> f64 {
    let bce: f64 = bags
        .iter()
        .map(|bag| {
            let z = spec.log_odds(bag).unwrap();
            if bag.label { -log_sigmoid(z) } else { -log_sigmoid(-z) }
        })
        .sum();
    bce / bags.len() as f64 + 0.5 * weight_decay * spec.scorer.w.dot(&spec.scorer.w)
}

pub struct GradCase {
    pub spec: ModelSpec,
    pub bags: Vec<Bag>,
    pub weight_decay: f64,
}

/// A random member of the trainable family on a few small bags.
pub fn random_grad_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=4usize);
    let n = rng.random_range(1..=4usize);
    let bags: Vec<Bag> = (0..n)
        .map(|i| {
            let s = rng.random_range(1..=6usize);
            let x: Vec<f32> = (0..s * m).map(|_| rng.random_range(-2.0f32..2.0)).collect();
            let label = rng.random_bool(0.5);
            Bag::new(i as u64, label, label.then_some(0), m, x).unwrap()
        })
        .collect();
    let min_s = bags.iter().map(Bag::num_instances).min().unwrap();
    let alpha = rng.random_range(0.05..0.9);
    let pooling = match rng.random_range(0..5) {
        0 => Pooling::Max,
        1 => Pooling::Mean,
        2 => Pooling::LogSumExp,
        3 => Pooling::SmoothMean(SmoothConfig::chain(alpha).unwrap()),
        _ => Pooling::SmoothMax(SmoothConfig::chain(alpha).unwrap()),
    };
    let order = if rng.random_bool(0.5) { Order::PredictionAggregation } else { Order::EmbeddingAggregation };
    let w = Array1::from_shape_fn(m, |_| rng.random_range(-1.5..1.5));
    let scorer = LinearScorer::new(w, rng.random_range(-1.0..1.0)).unwrap();
    let mut spec = ModelSpec::new(order, pooling, scorer);
    if rng.random_bool(0.4) {
        let half = rng.random_range(0..min_s);
        spec = spec.with_kernel((0..2 * half + 1).map(|_| rng.random_range(-1.0..1.0)).collect());
    }
    let weight_decay = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.5) };
    GradCase { spec, bags, weight_decay }
}

fn with_alpha(spec: &ModelSpec, alpha: f64) -> ModelSpec {
    let mut s = spec.clone();
    let cfg = SmoothConfig::chain(alpha).unwrap();
    s.pooling = match s.pooling {
        Pooling::SmoothMean(_) => Pooling::SmoothMean(cfg),
        Pooling::SmoothMax(_) => Pooling::SmoothMax(cfg),
        other => other,
    };
    s
}

/// Largest per-coordinate relative error between the analytic gradient and
/// central differences, `|g - fd| / max(|g|, |fd|, floor)`.
pub fn max_relative_grad_error(case: &GradCase, step: f64, floor: f64) -> f64 {
    let GradCase { spec, bags, weight_decay } = case;
    let (loss, grad) = loss_and_grad(spec, bags, *weight_decay).unwrap();
    let direct = oracle_loss(spec, bags, *weight_decay);
    let mut worst = (loss - direct).abs() / direct.abs().max(floor);

    let mut compare = |analytic: f64, plus: ModelSpec, minus: ModelSpec| {
        let fd = (oracle_loss(&plus, bags, *weight_decay) - oracle_loss(&minus, bags, *weight_decay)) / (2.0 * step);
        let err = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(floor);
        worst = worst.max(err);
    };
    for i in 0..spec.scorer.w.len() {
        let (mut p, mut q) = (spec.clone(), spec.clone());
        p.scorer.w[i] += step;
        q.scorer.w[i] -= step;
        compare(grad.w[i], p, q);
    }
    let (mut p, mut q) = (spec.clone(), spec.clone());
    p.scorer.b += step;
    q.scorer.b -= step;
    compare(grad.b, p, q);
    if let (Some(ga), Some(cfg)) = (grad.alpha, spec.pooling.smooth_config()) {
        compare(ga, with_alpha(spec, cfg.alpha + step), with_alpha(spec, cfg.alpha - step));
    }
    worst
}
