//! Shifted-mean multiple-instance learning benchmark.
//!
//! Bags of instance feature vectors are drawn from a generative process in
//! which positive bags carry a short contiguous window of instances whose
//! discriminative features are shifted. Because the process is known, the
//! exact posterior `p(y = 1 | bag)` is available in closed form and serves as
//! a ceiling against which pooling baselines are measured.
//!
//! Modules:
//!
//! * [`datagen`]: sampling, splitting and the `SMB1` binary dataset format.
//! * [`bayes`]: the closed-form posterior and its slow product-form oracle.
//! * [`pooling`]: max/mean, attention, Laplacian smoothing, self-attention,
//!   and convolution over the instance axis.
//! * [`models`]: pipeline assembly, handcrafted parameters and training of
//!   the linear family.
//! * [`eval`]: AUROC, paired bootstrap and the two experiment sweeps.
//! * [`app`]: config-driven commands used by the `milbench` binary.

pub mod app;
pub mod bayes;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod math;
pub mod models;
pub mod pooling;

pub use bayes::BayesModel;
pub use datagen::{Bag, Dataset, GenParams};
pub use error::{Error, Result};
pub use eval::{BootstrapResult, ScoredSet};
pub use models::{HandcraftedKind, LinearScorer, ModelSpec, Order, Pooling, TrainConfig};
