//! Sampling from the shifted-mean generative process.
//!
//! A bag draws its label `y ~ Bernoulli(q_pos)` and its size
//! `S ~ Uniform{s_low..=s_high}`. Negative bags are pure `Normal(mu, sigma^2)`
//! noise. Positive bags pick a window start uniformly among the `S - R + 1`
//! admissible positions and add `shift` to the first `K` features of the `R`
//! instances in that window.
//!
//! Every bag is sampled from its own ChaCha stream seeded by mixing the
//! dataset seed with the bag index, so a dataset can be generated in any
//! order (or in parallel) with identical results.

mod format;

pub use format::{
    dataset_checksum, decode_dataset, encode_dataset, read_dataset, read_manifest, write_dataset, write_manifest, Manifest,
    FORMAT_VERSION, MAGIC,
};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants of the generative process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    /// Prior probability of a positive bag.
    pub q_pos: f64,
    /// Inclusive lower bound on instances per bag.
    pub s_low: u32,
    /// Inclusive upper bound on instances per bag.
    pub s_high: u32,
    pub num_features: u32,
    /// The discriminative features are indices `0..num_discriminative`.
    pub num_discriminative: u32,
    /// Number of adjacent instances shifted in a positive bag.
    pub window: u32,
    pub shift: f64,
    pub base_mean: f64,
    pub base_std: f64,
    pub seed: u64,
}

impl Default for GenParams {
    /// The benchmark's main configuration: balanced labels, 15 to 45
    /// instances, 768 features of which one is discriminative, a window of
    /// three and a shift of two standard deviations.
    fn default() -> Self {
        Self {
            q_pos: 0.5,
            s_low: 15,
            s_high: 45,
            num_features: 768,
            num_discriminative: 1,
            window: 3,
            shift: 2.0,
            base_mean: 0.0,
            base_std: 1.0,
            seed: 0,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(0.0..=1.0).contains(&self.q_pos) {
            return bad(format!("q_pos must lie in [0, 1], got {}", self.q_pos));
        }
        if self.s_low < 1 || self.s_low > self.s_high {
            return bad(format!(
                "need 1 <= s_low <= s_high, got s_low={} s_high={}",
                self.s_low, self.s_high
            ));
        }
        if self.num_discriminative < 1 || self.num_discriminative > self.num_features {
            return bad(format!(
                "need 1 <= K <= M, got K={} M={}",
                self.num_discriminative, self.num_features
            ));
        }
        if self.window < 1 || self.window > self.s_low {
            return bad(format!(
                "need 1 <= R <= s_low, got R={} s_low={}",
                self.window, self.s_low
            ));
        }
        if !(self.shift.is_finite() && self.shift >= 0.0) {
            return bad(format!("shift must be finite and nonnegative, got {}", self.shift));
        }
        if !self.base_mean.is_finite() {
            return bad(format!("base_mean must be finite, got {}", self.base_mean));
        }
        if !(self.base_std.is_finite() && self.base_std > 0.0) {
            return bad(format!("base_std must be positive, got {}", self.base_std));
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.num_features as usize
    }

    pub fn k(&self) -> usize {
        self.num_discriminative as usize
    }

    pub fn r(&self) -> usize {
        self.window as usize
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// A bag can only be told apart from noise when the shift is nonzero and
    /// both labels have prior mass.
    pub fn has_signal(&self) -> bool {
        self.shift > 0.0 && self.q_pos > 0.0 && self.q_pos < 1.0
    }
}

/// One labeled bag of `S` instances with `M` features each.
///
/// Features are stored as `f32` in instance-major order; all downstream
/// arithmetic widens them to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    /// Position of the bag in the dataset it was sampled into.
    pub id: u64,
    pub label: bool,
    /// Zero-based start of the shifted window. Diagnostic only: present
    /// exactly for positive bags, and never read by any model.
    pub window_start: Option<usize>,
    num_features: usize,
    features: Vec<f32>,
}

impl Bag {
    pub fn new(
        id: u64,
        label: bool,
        window_start: Option<usize>,
        num_features: usize,
        features: Vec<f32>,
    ) -> Result<Self> {
        if num_features == 0 || features.is_empty() || features.len() % num_features != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values do not form rows of width {}",
                features.len(),
                num_features
            )));
        }
        if label != window_start.is_some() {
            return Err(Error::Corrupt(format!(
                "bag {id}: window start must be present exactly for positive bags"
            )));
        }
        Ok(Self { id, label, window_start, num_features, features })
    }

    pub fn num_instances(&self) -> usize {
        self.features.len() / self.num_features
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn row(&self, j: usize) -> &[f32] {
        &self.features[j * self.num_features..(j + 1) * self.num_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.features.chunks_exact(self.num_features)
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [f32] {
        &mut self.features
    }

    /// Features widened to a `S x M` matrix.
    pub fn to_array(&self) -> ndarray::Array2<f64> {
        ndarray::Array2::from_shape_fn((self.num_instances(), self.num_features), |(j, m)| {
            self.features[j * self.num_features + m] as f64
        })
    }

    /// Checks the bag against the process that supposedly produced it.
    pub fn check(&self, params: &GenParams) -> Result<()> {
        let s = self.num_instances();
        if self.num_features != params.m() {
            return Err(Error::ShapeMismatch(format!(
                "bag {} has {} features, params say {}",
                self.id,
                self.num_features,
                params.m()
            )));
        }
        if s < params.s_low as usize || s > params.s_high as usize {
            return Err(Error::Corrupt(format!(
                "bag {} has {s} instances, outside [{}, {}]",
                self.id, params.s_low, params.s_high
            )));
        }
        if let Some(u) = self.window_start {
            if u + params.r() > s {
                return Err(Error::Corrupt(format!(
                    "bag {}: window start {u} leaves no room for {} instances",
                    self.id, params.window
                )));
            }
        }
        if let Some(i) = self.features.iter().position(|x| !x.is_finite()) {
            return Err(Error::Corrupt(format!("bag {}: non-finite feature at {i}", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub params: GenParams,
    pub bags: Vec<Bag>,
}

impl Dataset {
    pub fn new(params: GenParams, bags: Vec<Bag>) -> Result<Self> {
        params.validate()?;
        for bag in &bags {
            bag.check(&params)?;
        }
        Ok(Self { params, bags })
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.bags.iter().map(|b| b.label).collect()
    }

    pub fn num_positive(&self) -> usize {
        self.bags.iter().filter(|b| b.label).count()
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.bags.is_empty() {
            0.0
        } else {
            self.num_positive() as f64 / self.bags.len() as f64
        }
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the stream that generates bag `bag_index` under `seed`.
pub fn bag_seed(seed: u64, bag_index: u64) -> u64 {
    mix64(seed ^ mix64(bag_index))
}

pub fn sample_bag(params: &GenParams, bag_index: u64) -> Result<Bag> {
    params.validate()?;
    Ok(sample_bag_unchecked(params, bag_index))
}

fn sample_bag_unchecked(params: &GenParams, bag_index: u64) -> Bag {
    let mut rng = ChaCha8Rng::seed_from_u64(bag_seed(params.seed, bag_index));
    let label = rng.random_bool(params.q_pos);
    let s = rng.random_range(params.s_low..=params.s_high) as usize;
    let (m, k, r) = (params.m(), params.k(), params.r());
    let window_start = label.then(|| rng.random_range(0..=s - r));

    let mut features = Vec::with_capacity(s * m);
    for j in 0..s {
        let in_window = window_start.is_some_and(|u| (u..u + r).contains(&j));
        for f in 0..m {
            let z: f64 = StandardNormal.sample(&mut rng);
            let mut x = params.base_mean + params.base_std * z;
            if in_window && f < k {
                x += params.shift;
            }
            features.push(x as f32);
        }
    }
    Bag { id: bag_index, label, window_start, num_features: m, features }
}

/// Samples `n_bags` bags; bag `i` is `sample_bag(params, i)`.
pub fn sample_dataset(params: &GenParams, n_bags: usize) -> Result<Dataset> {
    params.validate()?;
    if n_bags == 0 {
        return Err(Error::Empty("n_bags must be at least 1"));
    }
    let bags = (0..n_bags as u64)
        .into_par_iter()
        .map(|i| sample_bag_unchecked(params, i))
        .collect();
    Ok(Dataset { params: *params, bags })
}

/// Random disjoint partition into `(first, second)` parts.
///
/// The first part receives `round(train_fraction * N)` bags, clamped so that
/// neither part is empty. Both parts keep the original relative order.
pub fn split_dataset(ds: &Dataset, train_fraction: f64, split_seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParams(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = ds.len();
    if n < 2 {
        return Err(Error::InvalidParams(format!("cannot split a dataset of {n} bags")));
    }
    let n_first = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix64(split_seed)));
    let (first, second) = order.split_at_mut(n_first);
    first.sort_unstable();
    second.sort_unstable();

    let take = |idx: &[usize]| Dataset {
        params: ds.params,
        bags: idx.iter().map(|&i| ds.bags[i].clone()).collect(),
    };
    Ok((take(first), take(second)))
}
