//! Experiment grids: test AUROC against training-set size and against the
//! shift magnitude, with the Bayes posterior as the reference row.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::auroc;
use crate::bayes::BayesModel;
use crate::datagen::{mix64, sample_dataset, split_dataset, Dataset, GenParams};
use crate::error::{Error, Result};
use crate::models::{
    grid_search, handcrafted_model, HandcraftedKind, LinearScorer, ModelSpec, Order, Pooling, TrainConfig,
    LEARNING_RATE_GRID, WEIGHT_DECAY_GRID,
};

/// A method evaluated in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SweepModel {
    /// Trained from scratch under every order in the settings.
    Trained {
        pooling: Pooling,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kernel: Option<Vec<f64>>,
    },
    /// Fixed parameters; no data needed.
    Handcrafted { kind: HandcraftedKind },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSettings {
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub train: TrainConfig,
    pub orders: Vec<Order>,
    pub train_fraction: f64,
    pub split_seed: u64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            learning_rates: LEARNING_RATE_GRID.to_vec(),
            weight_decays: WEIGHT_DECAY_GRID.to_vec(),
            train: TrainConfig::default(),
            orders: Order::ALL.to_vec(),
            train_fraction: 0.8,
            split_seed: 0,
        }
    }
}

/// One line of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub order: String,
    pub pooling: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub delta: f64,
    pub seed: u64,
    pub split: String,
    pub auroc: f64,
    pub epochs_trained: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
}

pub fn write_results_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record([
            "method", "order", "pooling", "N", "delta", "seed", "split", "auroc", "epochs_trained", "lr", "weight_decay",
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluates every model on `test` after training on `n_bags` fresh bags.
fn run_cell(
    params: &GenParams,
    n_bags: usize,
    data_seed: u64,
    models: &[SweepModel],
    test: &Dataset,
    bayes_auroc: f64,
    settings: &SweepSettings,
) -> Result<Vec<ResultRow>> {
    let delta = params.shift;
    let mut rows = vec![ResultRow {
        method: "bayes".into(),
        order: "-".into(),
        pooling: "-".into(),
        n: n_bags,
        delta,
        seed: test.params.seed,
        split: "test".into(),
        auroc: bayes_auroc,
        epochs_trained: None,
        lr: None,
        weight_decay: None,
    }];

    let needs_data = models.iter().any(|m| matches!(m, SweepModel::Trained { .. }));
    let split = if needs_data {
        let ds = sample_dataset(&params.with_seed(data_seed), n_bags)?;
        Some(split_dataset(&ds, settings.train_fraction, settings.split_seed)?)
    } else {
        None
    };

    for model in models {
        match model {
            SweepModel::Handcrafted { kind } => {
                let spec = handcrafted_model(params, *kind)?;
                rows.push(ResultRow {
                    method: format!("handcrafted:{kind}"),
                    order: spec.order.to_string(),
                    pooling: spec.pooling_label(),
                    n: n_bags,
                    delta,
                    seed: test.params.seed,
                    split: "test".into(),
                    auroc: auroc(&spec.score_dataset(test)?)?,
                    epochs_trained: None,
                    lr: None,
                    weight_decay: None,
                });
            }
            SweepModel::Trained { pooling, kernel } => {
                let (train, val) = split.as_ref().expect("sampled above");
                for &order in &settings.orders {
                    let mut template = ModelSpec::new(order, pooling.clone(), LinearScorer::zeros(params.m()));
                    template.kernel = kernel.clone();
                    let out = grid_search(
                        &template,
                        train,
                        val,
                        &settings.learning_rates,
                        &settings.weight_decays,
                        &settings.train,
                    )?;
                    rows.push(ResultRow {
                        method: "trained".into(),
                        order: order.to_string(),
                        pooling: template.pooling_label(),
                        n: n_bags,
                        delta,
                        seed: data_seed,
                        split: "test".into(),
                        auroc: auroc(&out.spec.score_dataset(test)?)?,
                        epochs_trained: Some(out.log.epochs_trained),
                        lr: Some(out.learning_rate),
                        weight_decay: Some(out.weight_decay),
                    });
                }
            }
        }
    }
    Ok(rows)
}

fn check_test_compatible(base: &GenParams, test: &Dataset) -> Result<()> {
    let t = &test.params;
    if (t.num_features, t.num_discriminative, t.window) != (base.num_features, base.num_discriminative, base.window) {
        return Err(Error::ShapeMismatch("test set was generated with different M, K or R".into()));
    }
    Ok(())
}

/// Seed of the training data for the cell with `n` bags.
pub fn training_seed(base_seed: u64, salt: u64) -> u64 {
    mix64(base_seed ^ mix64(salt ^ 0x7472_6169_6e00_0000))
}

/// One Bayes row plus one row per (model, order) for each training-set size.
/// The same held-out `test` set scores every cell.
pub fn sweep_training_size(
    sizes: &[usize],
    base: &GenParams,
    models: &[SweepModel],
    test: &Dataset,
    settings: &SweepSettings,
) -> Result<Vec<ResultRow>> {
    if sizes.is_empty() {
        return Err(Error::Empty("training-size grid"));
    }
    base.validate()?;
    check_test_compatible(base, test)?;
    let bayes = BayesModel::new(test.params)?;
    let bayes_auroc = auroc(&bayes.score_dataset_log_odds(test)?)?;
    let mut rows = Vec::new();
    for &n in sizes {
        rows.extend(run_cell(base, n, training_seed(base.seed, n as u64), models, test, bayes_auroc, settings)?);
    }
    Ok(rows)
}

/// Seed of the held-out set for shift `delta`.
pub fn delta_test_seed(base_seed: u64, delta: f64) -> u64 {
    mix64(base_seed ^ mix64(delta.to_bits() ^ 0x7465_7374_0000_0000))
}

/// For each shift: a fresh test set of `test_size` bags, `n_train` training
/// bags, and the same rows as [`sweep_training_size`].
pub fn sweep_delta(
    deltas: &[f64],
    base: &GenParams,
    models: &[SweepModel],
    n_train: usize,
    test_size: usize,
    settings: &SweepSettings,
) -> Result<Vec<ResultRow>> {
    if deltas.is_empty() {
        return Err(Error::Empty("shift grid"));
    }
    let mut rows = Vec::new();
    for &delta in deltas {
        let params = GenParams { shift: delta, ..*base };
        params.validate()?;
        let test = sample_dataset(&params.with_seed(delta_test_seed(base.seed, delta)), test_size)?;
        let bayes_auroc = auroc(&BayesModel::new(test.params)?.score_dataset_log_odds(&test)?)?;
        let data_seed = training_seed(base.seed, delta.to_bits());
        rows.extend(run_cell(&params, n_train, data_seed, models, &test, bayes_auroc, settings)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> GenParams {
        GenParams { num_features: 4, s_low: 5, s_high: 8, ..GenParams::default() }
    }

    fn quick() -> SweepSettings {
        SweepSettings {
            learning_rates: vec![0.1],
            weight_decays: vec![0.0],
            train: TrainConfig { max_epochs: 5, patience: 5, ..TrainConfig::default() },
            ..SweepSettings::default()
        }
    }

    #[test]
    fn row_structure_per_size() {
        let base = tiny();
        let test = sample_dataset(&base.with_seed(99), 200).unwrap();
        let models = [
            SweepModel::Trained { pooling: Pooling::Max, kernel: None },
            SweepModel::Trained { pooling: Pooling::Mean, kernel: None },
        ];
        let rows = sweep_training_size(&[100, 400], &base, &models, &test, &quick()).unwrap();
        assert_eq!(rows.len(), 2 * (4 + 1));
        for n in [100, 400] {
            let cell: Vec<_> = rows.iter().filter(|r| r.n == n).collect();
            assert_eq!(cell.len(), 5);
            assert_eq!(cell.iter().filter(|r| r.method == "bayes").count(), 1);
        }
        let bayes: Vec<f64> = rows.iter().filter(|r| r.method == "bayes").map(|r| r.auroc).collect();
        assert_eq!(bayes[0], bayes[1]);
    }

    #[test]
    fn results_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let base = tiny();
        let test = sample_dataset(&base.with_seed(5), 100).unwrap();
        let models = [SweepModel::Handcrafted { kind: HandcraftedKind::ContextConv }];
        let rows = sweep_training_size(&[10], &base, &models, &test, &quick()).unwrap();
        write_results_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, "method,order,pooling,N,delta,seed,split,auroc,epochs_trained,lr,weight_decay");
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn rejects_empty_grids_and_bad_tests() {
        let base = tiny();
        let test = sample_dataset(&base, 50).unwrap();
        assert!(sweep_training_size(&[], &base, &[], &test, &quick()).is_err());
        assert!(sweep_delta(&[], &base, &[], 10, 10, &quick()).is_err());
        let other = sample_dataset(&GenParams { num_features: 5, ..base }, 50).unwrap();
        assert!(sweep_training_size(&[10], &base, &[], &other, &quick()).is_err());
    }
}
