//! Config-driven commands behind the `milbench` binary.
//!
//! A run is described by a TOML file (see [`RunConfig`]); command-line flags
//! override individual keys. Every command writes its artifacts into the run
//! directory together with `run.json`, which records the fully resolved
//! config, its SHA-256 and the seeds used, so any artifact can be
//! regenerated from it.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bayes::BayesModel;
use crate::datagen::{self, sample_dataset, split_dataset, Dataset, GenParams, Manifest};
use crate::error::{Error, Result};
use crate::eval::{
    auroc, paired_bootstrap, sweep_delta, sweep_training_size, write_results_csv, BootstrapResult, ResultRow,
    ScoredSet, SweepModel, SweepSettings,
};
use crate::models::{
    grid_search, handcrafted_model, window_kernel, HandcraftedKind, LinearScorer, ModelSpec, Order, Pooling,
    TrainConfig, LEARNING_RATE_GRID, WEIGHT_DECAY_GRID,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Generate,
    BayesScore,
    Handcrafted,
    Train,
    Bootstrap,
    SweepN,
    SweepDelta,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Generate => "generate",
            ExperimentKind::BayesScore => "bayes-score",
            ExperimentKind::Handcrafted => "handcrafted",
            ExperimentKind::Train => "train",
            ExperimentKind::Bootstrap => "bootstrap",
            ExperimentKind::SweepN => "sweep-n",
            ExperimentKind::SweepDelta => "sweep-delta",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown experiment kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Bags to generate (`generate`) or to train on (`train`).
    pub n_bags: usize,
    /// Dataset file written by `generate` and read by `bayes-score`.
    pub path: Option<PathBuf>,
    pub test_size: usize,
    pub test_seed: u64,
    /// Read the held-out set from a file instead of sampling it.
    pub test_path: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { n_bags: 1000, path: None, test_size: 1000, test_seed: 1_000_003, test_path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub pooling: String,
    pub orders: Vec<String>,
    /// Smoothing strength for `smooth_*` poolings.
    pub alpha: f64,
    /// Prepend the window-sum convolution.
    pub conv: bool,
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub max_epochs: usize,
    pub patience: usize,
    pub init_seed: u64,
    pub learn_alpha: bool,
    pub train_fraction: f64,
    pub split_seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            pooling: "max".into(),
            orders: vec!["prediction".into(), "embedding".into()],
            alpha: 0.5,
            conv: false,
            learning_rates: LEARNING_RATE_GRID.to_vec(),
            weight_decays: WEIGHT_DECAY_GRID.to_vec(),
            max_epochs: t.max_epochs,
            patience: t.patience,
            init_seed: 0,
            learn_alpha: false,
            train_fraction: 0.8,
            split_seed: 0,
        }
    }
}

impl TrainSection {
    fn orders(&self) -> Result<Vec<Order>> {
        if self.orders.is_empty() {
            return Err(Error::Config("train.orders must not be empty".into()));
        }
        self.orders.iter().map(|s| s.parse()).collect()
    }

    fn settings(&self) -> Result<SweepSettings> {
        let s = SweepSettings {
            learning_rates: self.learning_rates.clone(),
            weight_decays: self.weight_decays.clone(),
            train: TrainConfig {
                learning_rate: *self.learning_rates.first().unwrap_or(&0.01),
                weight_decay: 0.0,
                max_epochs: self.max_epochs,
                patience: self.patience,
                init_seed: Some(self.init_seed),
                learn_alpha: self.learn_alpha,
            },
            orders: self.orders()?,
            train_fraction: self.train_fraction,
            split_seed: self.split_seed,
        };
        if s.learning_rates.is_empty() || s.weight_decays.is_empty() {
            return Err(Error::Config("hyperparameter grids must not be empty".into()));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HandcraftedSection {
    pub kinds: Vec<String>,
    pub eps: f64,
    pub temperature: f64,
}

impl Default for HandcraftedSection {
    fn default() -> Self {
        Self {
            kinds: HandcraftedKind::all().iter().map(|k| k.name().to_string()).collect(),
            eps: HandcraftedKind::DEFAULT_EPS,
            temperature: HandcraftedKind::DEFAULT_TEMPERATURE,
        }
    }
}

impl HandcraftedSection {
    fn parse_kind(&self, name: &str) -> Result<HandcraftedKind> {
        Ok(match name.parse()? {
            HandcraftedKind::Abmil { .. } => HandcraftedKind::Abmil { eps: self.eps },
            HandcraftedKind::AbmilConv { .. } => HandcraftedKind::AbmilConv { eps: self.eps },
            HandcraftedKind::SelfAttention { .. } => HandcraftedKind::SelfAttention { temperature: self.temperature },
            HandcraftedKind::SelfAttentionConv { .. } => {
                HandcraftedKind::SelfAttentionConv { temperature: self.temperature }
            }
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    /// Method specs: `bayes`, `bayes-noise:<std>`, `handcrafted:<kind>` or
    /// `scores:<csv path>`.
    pub a: String,
    pub b: String,
    pub n_resamples: usize,
    pub seed: u64,
    pub noise_seed: u64,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        Self {
            a: "bayes".into(),
            b: "handcrafted:context-conv".into(),
            n_resamples: 500,
            seed: 0,
            noise_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub sizes: Vec<usize>,
    pub deltas: Vec<f64>,
    pub n_train: usize,
    /// `trained:<pooling>[+conv]` or `handcrafted:<kind>`.
    pub models: Vec<String>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            sizes: vec![100, 400, 2000],
            deltas: vec![0.0, 1.0, 2.0, 3.0],
            n_train: 400,
            models: vec!["trained:max".into(), "trained:mean".into(), "handcrafted:context-conv".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Experiment run by the `run` subcommand.
    pub kind: Option<ExperimentKind>,
    pub out_dir: PathBuf,
    pub jobs: Option<usize>,
    pub gen: GenParams,
    pub data: DataSection,
    pub train: TrainSection,
    pub handcrafted: HandcraftedSection,
    pub bootstrap: BootstrapSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kind: None,
            out_dir: PathBuf::from("runs/default"),
            jobs: None,
            gen: GenParams::default(),
            data: DataSection::default(),
            train: TrainSection::default(),
            handcrafted: HandcraftedSection::default(),
            bootstrap: BootstrapSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Loads `path` (or defaults) and applies `key=value` overrides, where
    /// the key is dotted (`gen.shift`) and the value is a TOML literal
    /// (`2.5`, `"max"`, `[100, 400]`). Bare words are taken as strings.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut value: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {ov:?} is not key=value")))?;
            set_dotted(&mut value, key.trim(), parse_toml_literal(raw.trim()))?;
        }
        let text = toml::to_string(&value).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> Result<String> {
        Ok(datagen_sha(&serde_json::to_vec(self)?))
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()
    }
}

fn datagen_sha(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

fn parse_toml_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty key {key:?}")))?;
    let mut cur = table;
    for part in parts {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{part:?} in {key:?} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Provenance written next to every set of artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seeds: Seeds,
    pub notes: Vec<String>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Seeds {
    pub gen: u64,
    pub test: u64,
    pub split: u64,
    pub init: u64,
    pub bootstrap: u64,
}

fn write_metadata(cfg: &RunConfig, command: &str, notes: Vec<String>) -> Result<String> {
    let hash = cfg.hash()?;
    let meta = RunMetadata {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: hash.clone(),
        seeds: Seeds {
            gen: cfg.gen.seed,
            test: cfg.data.test_seed,
            split: cfg.train.split_seed,
            init: cfg.train.init_seed,
            bootstrap: cfg.bootstrap.seed,
        },
        notes,
        config: cfg.clone(),
    };
    fs::write(cfg.out_dir.join("run.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(hash)
}

fn prepare(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(())
}

/// The held-out set: read from `data.test_path` or sampled with
/// `data.test_seed`.
pub fn test_set(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data.test_path {
        Some(p) => datagen::read_dataset(p),
        None => sample_dataset(&cfg.gen.with_seed(cfg.data.test_seed), cfg.data.test_size),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateReport {
    pub path: PathBuf,
    pub n_bags: usize,
    pub positive_fraction: f64,
    pub checksum: String,
    pub no_signal: bool,
}

/// Samples `data.n_bags` bags and writes the dataset and its manifest.
pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateReport> {
    prepare(cfg)?;
    let path = cfg.data.path.clone().unwrap_or_else(|| cfg.out_dir.join("dataset.smb"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let ds = sample_dataset(&cfg.gen, cfg.data.n_bags)?;
    let checksum = datagen::write_dataset(&ds, &path)?;
    let manifest = Manifest::describe(&ds, checksum.clone());
    datagen::write_manifest(&manifest, Manifest::path_for(&path))?;
    write_metadata(cfg, "generate", vec![])?;
    Ok(GenerateReport {
        path,
        n_bags: ds.len(),
        positive_fraction: ds.positive_fraction(),
        checksum,
        no_signal: manifest.no_signal,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub scores_path: PathBuf,
    pub n_bags: usize,
    pub auroc: Option<f64>,
}

/// Scores a dataset file with the posterior of its own generating process.
pub fn cmd_bayes_score(cfg: &RunConfig, dataset: &Path) -> Result<ScoreReport> {
    let ds = datagen::read_dataset(dataset)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let scores = BayesModel::new(ds.params)?.score_dataset(&ds)?;
    let scores_path = cfg.out_dir.join("bayes_scores.csv");
    scores.write_csv(&scores_path)?;
    write_metadata(cfg, "bayes-score", vec![format!("dataset: {}", dataset.display())])?;
    Ok(ScoreReport { scores_path, n_bags: ds.len(), auroc: auroc(&scores).ok() })
}

fn bayes_row(test: &Dataset, n: usize) -> Result<ResultRow> {
    let a = auroc(&BayesModel::new(test.params)?.score_dataset_log_odds(test)?)?;
    Ok(ResultRow {
        method: "bayes".into(),
        order: "-".into(),
        pooling: "-".into(),
        n,
        delta: test.params.shift,
        seed: test.params.seed,
        split: "test".into(),
        auroc: a,
        epochs_trained: None,
        lr: None,
        weight_decay: None,
    })
}

/// Evaluates handcrafted models on the held-out set; writes each model's
/// JSON and a results table.
pub fn cmd_handcrafted(cfg: &RunConfig) -> Result<Vec<ResultRow>> {
    prepare(cfg)?;
    let test = test_set(cfg)?;
    let mut rows = vec![bayes_row(&test, 0)?];
    for name in &cfg.handcrafted.kinds {
        let kind = cfg.handcrafted.parse_kind(name)?;
        let spec = handcrafted_model(&test.params, kind)?;
        fs::write(cfg.out_dir.join(format!("model_{}.json", kind.name())), spec.to_json()? + "\n")?;
        rows.push(ResultRow {
            method: format!("handcrafted:{kind}"),
            order: spec.order.to_string(),
            pooling: spec.pooling_label(),
            n: 0,
            delta: test.params.shift,
            seed: test.params.seed,
            split: "test".into(),
            auroc: auroc(&spec.score_dataset(&test)?)?,
            epochs_trained: None,
            lr: None,
            weight_decay: None,
        });
    }
    write_results_csv(&rows, cfg.out_dir.join("results.csv"))?;
    write_metadata(cfg, "handcrafted", vec![])?;
    Ok(rows)
}

fn parse_trained(cfg: &RunConfig, pooling: &str) -> Result<SweepModel> {
    let (name, conv) = match pooling.strip_suffix("+conv") {
        Some(n) => (n, true),
        None => (pooling, cfg.train.conv),
    };
    Ok(SweepModel::Trained {
        pooling: Pooling::from_name(name, cfg.train.alpha)?,
        kernel: conv.then(|| window_kernel(cfg.gen.r())),
    })
}

/// Parses `trained:<pooling>[+conv]` or `handcrafted:<kind>`.
pub fn parse_sweep_model(cfg: &RunConfig, s: &str) -> Result<SweepModel> {
    match s.split_once(':') {
        Some(("trained", p)) => parse_trained(cfg, p),
        Some(("handcrafted", k)) => Ok(SweepModel::Handcrafted { kind: cfg.handcrafted.parse_kind(k)? }),
        _ => Err(Error::Config(format!("model {s:?} must be trained:<pooling> or handcrafted:<kind>"))),
    }
}

/// Trains `train.pooling` under each order with the full grid, then reports
/// test AUROC next to the Bayes ceiling.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<ResultRow>> {
    prepare(cfg)?;
    let settings = cfg.train.settings()?;
    let SweepModel::Trained { pooling, kernel } = parse_trained(cfg, &cfg.train.pooling)? else {
        unreachable!()
    };
    let ds = sample_dataset(&cfg.gen, cfg.data.n_bags)?;
    let (train, val) = split_dataset(&ds, settings.train_fraction, settings.split_seed)?;
    let test = test_set(cfg)?;
    let mut rows = vec![bayes_row(&test, ds.len())?];
    for &order in &settings.orders {
        let mut template = ModelSpec::new(order, pooling.clone(), LinearScorer::zeros(cfg.gen.m()));
        template.kernel = kernel.clone();
        let out = grid_search(&template, &train, &val, &settings.learning_rates, &settings.weight_decays, &settings.train)?;
        let tag = format!("{}_{}", order, pooling.name());
        fs::write(cfg.out_dir.join(format!("model_{tag}.json")), out.spec.to_json()? + "\n")?;
        out.log.write_csv(cfg.out_dir.join(format!("train_log_{tag}.csv")))?;
        rows.push(ResultRow {
            method: "trained".into(),
            order: order.to_string(),
            pooling: template.pooling_label(),
            n: ds.len(),
            delta: cfg.gen.shift,
            seed: cfg.gen.seed,
            split: "test".into(),
            auroc: auroc(&out.spec.score_dataset(&test)?)?,
            epochs_trained: Some(out.log.epochs_trained),
            lr: Some(out.learning_rate),
            weight_decay: Some(out.weight_decay),
        });
    }
    write_results_csv(&rows, cfg.out_dir.join("results.csv"))?;
    write_metadata(cfg, "train", vec![])?;
    Ok(rows)
}

/// Scores `test` with a bootstrap method spec.
pub fn method_scores(cfg: &RunConfig, method: &str, test: &Dataset) -> Result<ScoredSet> {
    let bayes = || BayesModel::new(test.params);
    match method.split_once(':') {
        None if method == "bayes" => bayes()?.score_dataset(test),
        Some(("bayes-noise", sd)) => {
            let sd: f64 = sd.parse().map_err(|_| Error::Config(format!("bad noise level in {method:?}")))?;
            let normal = Normal::new(0.0, sd).map_err(|e| Error::Config(format!("{method:?}: {e}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.bootstrap.noise_seed);
            Ok(bayes()?.score_dataset(test)?.map_scores(|s| s + normal.sample(&mut rng)))
        }
        Some(("handcrafted", k)) => handcrafted_model(&test.params, cfg.handcrafted.parse_kind(k)?)?.score_dataset(test),
        Some(("scores", path)) => {
            let s = ScoredSet::read_csv(path)?;
            if s.labels != test.labels() {
                return Err(Error::ShapeMismatch(format!("{path} does not score the test set")));
            }
            Ok(s)
        }
        _ => Err(Error::Config(format!(
            "unknown method {method:?} (expected bayes, bayes-noise:<std>, handcrafted:<kind> or scores:<path>)"
        ))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapReport {
    #[serde(flatten)]
    pub result: BootstrapResult,
    pub a: String,
    pub b: String,
    pub auroc_a: f64,
    pub auroc_b: f64,
    pub config_sha256: String,
}

pub fn cmd_bootstrap(cfg: &RunConfig) -> Result<BootstrapReport> {
    prepare(cfg)?;
    let test = test_set(cfg)?;
    let a = method_scores(cfg, &cfg.bootstrap.a, &test)?;
    let b = method_scores(cfg, &cfg.bootstrap.b, &test)?;
    let result = paired_bootstrap(&a, &b, cfg.bootstrap.n_resamples, cfg.bootstrap.seed)?;
    let hash = write_metadata(cfg, "bootstrap", vec![])?;
    let report = BootstrapReport {
        result,
        a: cfg.bootstrap.a.clone(),
        b: cfg.bootstrap.b.clone(),
        auroc_a: auroc(&a)?,
        auroc_b: auroc(&b)?,
        config_sha256: hash,
    };
    fs::write(cfg.out_dir.join("bootstrap.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

fn sweep_models(cfg: &RunConfig) -> Result<Vec<SweepModel>> {
    if cfg.sweep.models.is_empty() {
        return Err(Error::Config("sweep.models must not be empty".into()));
    }
    cfg.sweep.models.iter().map(|m| parse_sweep_model(cfg, m)).collect()
}

pub fn cmd_sweep_n(cfg: &RunConfig) -> Result<Vec<ResultRow>> {
    prepare(cfg)?;
    if cfg.sweep.sizes.is_empty() {
        return Err(Error::Config("sweep.sizes must not be empty".into()));
    }
    let models = sweep_models(cfg)?;
    let test = test_set(cfg)?;
    let rows = sweep_training_size(&cfg.sweep.sizes, &cfg.gen, &models, &test, &cfg.train.settings()?)?;
    write_results_csv(&rows, cfg.out_dir.join("results.csv"))?;
    write_metadata(
        cfg,
        "sweep-n",
        vec![
            "one held-out test set shared by every training size".into(),
            format!("training sizes: {:?}", cfg.sweep.sizes),
        ],
    )?;
    Ok(rows)
}

pub fn cmd_sweep_delta(cfg: &RunConfig) -> Result<Vec<ResultRow>> {
    prepare(cfg)?;
    if cfg.sweep.deltas.is_empty() {
        return Err(Error::Config("sweep.deltas must not be empty".into()));
    }
    let models = sweep_models(cfg)?;
    let rows = sweep_delta(
        &cfg.sweep.deltas,
        &cfg.gen,
        &models,
        cfg.sweep.n_train,
        cfg.data.test_size,
        &cfg.train.settings()?,
    )?;
    write_results_csv(&rows, cfg.out_dir.join("results.csv"))?;
    write_metadata(
        cfg,
        "sweep-delta",
        vec![
            "a fresh held-out test set per shift, seeded from gen.seed and the shift".into(),
            format!("shifts: {:?}, training bags: {}", cfg.sweep.deltas, cfg.sweep.n_train),
        ],
    )?;
    Ok(rows)
}
