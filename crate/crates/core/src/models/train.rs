//! Cross-entropy training of the linear pipeline family.
//!
//! The trainable family is a linear scorer combined with max, mean,
//! log-mean-exp or smoothed (mean/max) pooling, in either order, optionally
//! behind a fixed convolution kernel. Gradients are exact; max pooling uses
//! the subgradient through its argmax (lowest index on ties).
//!
//! In prediction aggregation the convolution, the smoothing solve and the
//! projection onto `w` are all linear, so instance logits are computed from
//! the projected scores `X w` and gradients are pulled back through the
//! adjoint operators: the transposed convolution and, since the smoothing
//! system is symmetric, the same tridiagonal solve.

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ModelSpec, Order, Pooling};
use crate::datagen::{Bag, Dataset};
use crate::error::{Error, Result};
use crate::eval::{auroc, ScoredSet};
use crate::math::{argmax, log_sigmoid, logsumexp, sigmoid, softmax_in_place};
use crate::pooling::{self, ChainSystem, EmbeddingBag, SmoothConfig};

pub const LEARNING_RATE_GRID: [f64; 4] = [0.1, 0.01, 0.001, 0.0001];
pub const WEIGHT_DECAY_GRID: [f64; 8] = [1.0, 0.1, 0.01, 0.001, 0.0001, 1e-5, 1e-6, 0.0];

/// Largest smoothing strength reachable when alpha is learned.
const ALPHA_MAX: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// `Some(seed)`: start from `w ~ N(0, 0.01^2)`, `b = 0`.
    /// `None`: start from the parameters already in the spec.
    pub init_seed: Option<u64>,
    /// Also descend on the smoothing strength.
    pub learn_alpha: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            weight_decay: 0.0,
            max_epochs: 1000,
            patience: 100,
            init_seed: Some(0),
            learn_alpha: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParams(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidParams(format!("weight decay must be nonnegative, got {}", self.weight_decay)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w: Array1<f64>,
    pub b: f64,
    /// Present for smoothed poolings.
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auroc: f64,
    /// Number of gradient steps taken.
    pub epochs_trained: usize,
    pub stopped_early: bool,
    pub diverged: bool,
}

impl TrainLog {
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "val_auroc"])?;
        for r in &self.records {
            w.write_record([r.epoch.to_string(), format!("{:.17e}", r.train_loss), format!("{:.17e}", r.val_auroc)])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Readout {
    Max,
    Mean,
    LogMeanExp,
}

#[derive(Debug, Clone)]
struct Family {
    order: Order,
    readout: Readout,
    smoothed: bool,
    kernel: Option<Vec<f64>>,
}

impl Family {
    fn of(spec: &ModelSpec) -> Result<(Self, Option<f64>)> {
        let (readout, alpha) = match &spec.pooling {
            Pooling::Max => (Readout::Max, None),
            Pooling::Mean => (Readout::Mean, None),
            Pooling::LogSumExp => (Readout::LogMeanExp, None),
            Pooling::SmoothMean(c) => (Readout::Mean, Some(c.alpha)),
            Pooling::SmoothMax(c) => (Readout::Max, Some(c.alpha)),
            other => {
                return Err(Error::Unsupported(format!("pooling {} is not in the trainable family", other.name())))
            }
        };
        let fam = Family { order: spec.order, readout, smoothed: alpha.is_some(), kernel: spec.kernel.clone() };
        Ok((fam, alpha))
    }
}

#[derive(Debug, Clone)]
struct Params {
    w: Array1<f64>,
    b: f64,
    alpha: Option<f64>,
}

impl Params {
    fn system(&self, n: usize) -> Result<Option<ChainSystem>> {
        self.alpha.map(|a| ChainSystem::new(&SmoothConfig::chain(a)?, n)).transpose()
    }

    fn write_into(&self, spec: &mut ModelSpec) {
        spec.scorer.w = self.w.clone();
        spec.scorer.b = self.b;
        if let (Some(a), Pooling::SmoothMean(c) | Pooling::SmoothMax(c)) = (self.alpha, &mut spec.pooling) {
            c.alpha = a;
        }
    }
}

struct Acc {
    loss: f64,
    w: Array1<f64>,
    b: f64,
    alpha: f64,
}

impl Acc {
    fn zeros(m: usize) -> Self {
        Self { loss: 0.0, w: Array1::zeros(m), b: 0.0, alpha: 0.0 }
    }
}

/// Per-bag precomputation: pooled embeddings for embedding aggregation when
/// nothing before the scorer is trained.
enum Cached {
    Raw,
    Pooled(Array1<f64>),
}

fn conv1d(v: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = v.len() as isize;
    let half = (kernel.len() / 2) as isize;
    (0..n)
        .map(|j| {
            kernel
                .iter()
                .enumerate()
                .filter_map(|(t, &k)| {
                    let src = j + t as isize - half;
                    (0..n).contains(&src).then(|| k * v[src as usize])
                })
                .sum()
        })
        .collect()
}

/// Transpose of [`conv1d`].
fn conv1d_adjoint(c: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = c.len() as isize;
    let half = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; c.len()];
    for j in 0..n {
        for (t, &k) in kernel.iter().enumerate() {
            let src = j + t as isize - half;
            if (0..n).contains(&src) {
                out[src as usize] += k * c[j as usize];
            }
        }
    }
    out
}

fn bce(log_odds: f64, label: bool) -> f64 {
    if label {
        -log_sigmoid(log_odds)
    } else {
        -log_sigmoid(-log_odds)
    }
}

fn dot_f32(row: &[f32], w: &Array1<f64>) -> f64 {
    row.iter().zip(w.iter()).map(|(&x, &wi)| x as f64 * wi).sum()
}

/// Returns the bag log-odds; with `acc`, also adds the bag's loss and
/// gradient. `want_alpha` requests the derivative through the smoothing.
fn bag_pass(fam: &Family, p: &Params, bag: &Bag, cached: &Cached, acc: Option<&mut Acc>, want_alpha: bool) -> Result<f64> {
    let y = bag.label as u8 as f64;
    match fam.order {
        Order::PredictionAggregation => {
            let s = bag.num_instances();
            let ln_s = (s as f64).ln();
            let raw: Vec<f64> = bag.rows().map(|row| dot_f32(row, &p.w)).collect();
            let r = match &fam.kernel {
                Some(k) => conv1d(&raw, k),
                None => raw,
            };
            let sys = p.system(s)?;
            let t = match &sys {
                Some(sys) => {
                    let mut t = r.clone();
                    sys.smooth_column(&mut t);
                    t
                }
                None => r.clone(),
            };
            let logits: Vec<f64> = t.iter().map(|v| v + p.b).collect();

            let (lo, loss, delta) = match fam.readout {
                Readout::Max => {
                    let j = argmax(&logits).expect("nonempty");
                    let lo = logits[j];
                    let mut d = vec![0.0; s];
                    d[j] = sigmoid(lo) - y;
                    (lo, bce(lo, bag.label), d)
                }
                Readout::LogMeanExp => {
                    let lo = logsumexp(&logits) - ln_s;
                    let mut soft = logits.clone();
                    softmax_in_place(&mut soft);
                    let coef = sigmoid(lo) - y;
                    (lo, bce(lo, bag.label), soft.into_iter().map(|v| v * coef).collect())
                }
                Readout::Mean => {
                    let ls_pos: Vec<f64> = logits.iter().map(|&l| log_sigmoid(l)).collect();
                    let ls_neg: Vec<f64> = logits.iter().map(|&l| log_sigmoid(-l)).collect();
                    let lp = logsumexp(&ls_pos) - ln_s;
                    let lq = logsumexp(&ls_neg) - ln_s;
                    let (loss, d) = if bag.label {
                        let d = (0..s).map(|j| -(ls_pos[j] + ls_neg[j] - ln_s - lp).exp()).collect();
                        (-lp, d)
                    } else {
                        let d = (0..s).map(|j| (ls_pos[j] + ls_neg[j] - ln_s - lq).exp()).collect();
                        (-lq, d)
                    };
                    (lp - lq, loss, d)
                }
            };

            if let Some(acc) = acc {
                acc.loss += loss;
                acc.b += delta.iter().sum::<f64>();
                let mut c = delta.clone();
                if let Some(sys) = &sys {
                    if want_alpha {
                        let dt = sys.smooth_column_alpha_derivative(&r, &t);
                        acc.alpha += delta.iter().zip(&dt).map(|(a, b)| a * b).sum::<f64>();
                    }
                    sys.smooth_column(&mut c);
                }
                if let Some(k) = &fam.kernel {
                    c = conv1d_adjoint(&c, k);
                }
                let gw = acc.w.as_slice_mut().expect("contiguous");
                for (row, &cj) in bag.rows().zip(&c) {
                    if cj == 0.0 {
                        continue;
                    }
                    for (g, &x) in gw.iter_mut().zip(row) {
                        *g += cj * x as f64;
                    }
                }
            }
            Ok(lo)
        }
        Order::EmbeddingAggregation => {
            let (z, dz) = match cached {
                Cached::Pooled(z) => (z.clone(), None),
                Cached::Raw => pooled_with_alpha_derivative(fam, p, bag, want_alpha)?,
            };
            let lo = p.w.dot(&z) + p.b;
            if let Some(acc) = acc {
                let coef = sigmoid(lo) - y;
                acc.loss += bce(lo, bag.label);
                acc.w.scaled_add(coef, &z);
                acc.b += coef;
                if let Some(dz) = dz {
                    acc.alpha += coef * p.w.dot(&dz);
                }
            }
            Ok(lo)
        }
    }
}

fn embeddings(fam: &Family, bag: &Bag) -> Result<EmbeddingBag> {
    let h = EmbeddingBag::from_bag(bag);
    match &fam.kernel {
        Some(k) => pooling::conv_over_instances(&h, k),
        None => Ok(h),
    }
}

fn pooled(fam: &Family, p: &Params, bag: &Bag) -> Result<Array1<f64>> {
    let h = embeddings(fam, bag)?;
    let h = match p.alpha {
        Some(a) => pooling::smooth(&h, &SmoothConfig::chain(a)?)?,
        None => h,
    };
    Ok(match fam.readout {
        Readout::Max => pooling::max_pool(&h),
        Readout::Mean => pooling::mean_pool(&h),
        Readout::LogMeanExp => pooling::logsumexp_pool(&h),
    })
}

fn pooled_with_alpha_derivative(
    fam: &Family,
    p: &Params,
    bag: &Bag,
    want_alpha: bool,
) -> Result<(Array1<f64>, Option<Array1<f64>>)> {
    if !(fam.smoothed && want_alpha) {
        return Ok((pooled(fam, p, bag)?, None));
    }
    let h = embeddings(fam, bag)?.into_inner();
    let sys = p.system(h.nrows())?.expect("smoothed family has alpha");
    let m = h.ncols();
    let mut z = Array1::zeros(m);
    let mut dz = Array1::zeros(m);
    for (f, col) in h.columns().into_iter().enumerate() {
        let x = col.to_vec();
        let mut g = x.clone();
        sys.smooth_column(&mut g);
        let dg = sys.smooth_column_alpha_derivative(&x, &g);
        match fam.readout {
            Readout::Max => {
                let j = argmax(&g).expect("nonempty");
                z[f] = g[j];
                dz[f] = dg[j];
            }
            Readout::Mean => {
                z[f] = g.iter().sum::<f64>() / g.len() as f64;
                dz[f] = dg.iter().sum::<f64>() / dg.len() as f64;
            }
            Readout::LogMeanExp => unreachable!("no smoothed log-mean-exp pooling"),
        }
    }
    Ok((z, Some(dz)))
}

fn batch_loss_grad(fam: &Family, p: &Params, bags: &[Bag], cache: &[Cached], weight_decay: f64, want_alpha: bool) -> Result<(f64, Gradient)> {
    let m = p.w.len();
    let mut acc = Acc::zeros(m);
    for (bag, c) in bags.iter().zip(cache) {
        bag_pass(fam, p, bag, c, Some(&mut acc), want_alpha)?;
    }
    let n = bags.len() as f64;
    let loss = acc.loss / n + 0.5 * weight_decay * p.w.dot(&p.w);
    let mut gw = acc.w / n;
    gw.scaled_add(weight_decay, &p.w);
    let alpha = p.alpha.map(|_| acc.alpha / n);
    Ok((loss, Gradient { w: gw, b: acc.b / n, alpha }))
}

/// Mean binary cross-entropy over `batch` plus `weight_decay * |w|^2 / 2`,
/// and its exact gradient. The bias is not decayed.
pub fn loss_and_grad(spec: &ModelSpec, batch: &[Bag], weight_decay: f64) -> Result<(f64, Gradient)> {
    let (fam, alpha) = Family::of(spec)?;
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    for bag in batch {
        spec.check(bag.num_features())?;
    }
    let p = Params { w: spec.scorer.w.clone(), b: spec.scorer.b, alpha };
    let cache: Vec<Cached> = batch.iter().map(|_| Cached::Raw).collect();
    batch_loss_grad(&fam, &p, batch, &cache, weight_decay, true)
}

fn build_cache(fam: &Family, p: &Params, bags: &[Bag], alpha_fixed: bool) -> Result<Vec<Cached>> {
    if fam.order == Order::PredictionAggregation || (fam.smoothed && !alpha_fixed) {
        return Ok(bags.iter().map(|_| Cached::Raw).collect());
    }
    bags.par_iter().map(|b| pooled(fam, p, b).map(Cached::Pooled)).collect()
}

fn scored(fam: &Family, p: &Params, ds: &Dataset, cache: &[Cached]) -> Result<ScoredSet> {
    let scores = ds
        .bags
        .iter()
        .zip(cache)
        .map(|(b, c)| bag_pass(fam, p, b, c, None, false))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoredSet::new(ds.labels(), scores))
}

/// Full-batch gradient descent with validation-AUROC early stopping.
///
/// Epoch `e` of the log holds the training loss and validation AUROC of the
/// parameters after `e` steps. The parameters with the best validation AUROC
/// (earliest on ties) are returned.
pub fn train(spec: &ModelSpec, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<(ModelSpec, TrainLog)> {
    cfg.validate()?;
    let (fam, alpha) = Family::of(spec)?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let m = train.params.m();
    spec.check(m)?;
    if val.params.m() != m {
        return Err(Error::ShapeMismatch("training and validation feature counts differ".into()));
    }

    let mut p = Params { w: spec.scorer.w.clone(), b: spec.scorer.b, alpha };
    if let Some(seed) = cfg.init_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.01).expect("valid std");
        p.w = Array1::from_shape_fn(m, |_| normal.sample(&mut rng));
        p.b = 0.0;
    }
    let learn_alpha = cfg.learn_alpha && fam.smoothed;
    let train_cache = build_cache(&fam, &p, &train.bags, !learn_alpha)?;
    let val_cache = build_cache(&fam, &p, &val.bags, !learn_alpha)?;

    let mut log = TrainLog { best_val_auroc: f64::NEG_INFINITY, ..TrainLog::default() };
    let mut best = p.clone();
    let mut since_best = 0;
    for epoch in 0..=cfg.max_epochs {
        let (loss, grad) = batch_loss_grad(&fam, &p, &train.bags, &train_cache, cfg.weight_decay, learn_alpha)?;
        let val_auc = auroc(&scored(&fam, &p, val, &val_cache)?)?;
        log.records.push(EpochRecord { epoch, train_loss: loss, val_auroc: val_auc });
        if !loss.is_finite() || grad.w.iter().any(|g| !g.is_finite()) {
            log.diverged = true;
            break;
        }
        if val_auc > log.best_val_auroc {
            log.best_val_auroc = val_auc;
            log.best_epoch = epoch;
            best = p.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
        if epoch == cfg.max_epochs {
            break;
        }
        p.w.scaled_add(-cfg.learning_rate, &grad.w);
        p.b -= cfg.learning_rate * grad.b;
        if let (true, Some(a), Some(ga)) = (learn_alpha, p.alpha, grad.alpha) {
            p.alpha = Some((a - cfg.learning_rate * ga).clamp(0.0, ALPHA_MAX));
        }
        log.epochs_trained += 1;
    }

    let mut out = spec.clone();
    best.write_into(&mut out);
    Ok((out, log))
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub spec: ModelSpec,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub log: TrainLog,
    /// `(learning_rate, weight_decay, best validation AUROC)` for every run.
    pub runs: Vec<(f64, f64, f64)>,
}

impl GridOutcome {
    pub fn val_auroc(&self) -> f64 {
        self.log.best_val_auroc
    }
}

/// Trains one run per `(learning_rate, weight_decay)` pair and keeps the run
/// with the best validation AUROC (first in grid order on ties).
pub fn grid_search(
    spec: &ModelSpec,
    train_set: &Dataset,
    val: &Dataset,
    learning_rates: &[f64],
    weight_decays: &[f64],
    base: &TrainConfig,
) -> Result<GridOutcome> {
    if learning_rates.is_empty() || weight_decays.is_empty() {
        return Err(Error::Empty("hyperparameter grid"));
    }
    let cells: Vec<(f64, f64)> = learning_rates
        .iter()
        .flat_map(|&lr| weight_decays.iter().map(move |&wd| (lr, wd)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(lr, wd)| {
            let cfg = TrainConfig { learning_rate: lr, weight_decay: wd, ..base.clone() };
            train(spec, train_set, val, &cfg).map(|(s, log)| (lr, wd, s, log))
        })
        .collect::<Result<Vec<_>>>()?;
    let runs = results.iter().map(|(lr, wd, _, log)| (*lr, *wd, log.best_val_auroc)).collect();
    let mut best_idx = 0;
    for (i, r) in results.iter().enumerate() {
        if r.3.best_val_auroc > results[best_idx].3.best_val_auroc {
            best_idx = i;
        }
    }
    let (learning_rate, weight_decay, spec, log) = results.into_iter().nth(best_idx).expect("nonempty grid");
    Ok(GridOutcome { spec, learning_rate, weight_decay, log, runs })
}
