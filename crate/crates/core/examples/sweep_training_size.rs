//! Test AUROC against training-set size on a reduced feature dimension.
//!
//! cargo run --release --example sweep_training_size

use milbench::datagen::sample_dataset;
use milbench::eval::{sweep_training_size, write_results_csv, SweepModel, SweepSettings};
use milbench::models::window_kernel;
use milbench::{GenParams, HandcraftedKind, Pooling, TrainConfig};

fn main() -> milbench::Result<()> {
    let base = GenParams { num_features: 16, ..GenParams::default() };
    let test = sample_dataset(&base.with_seed(1_000_003), 1000)?;
    let models = [
        SweepModel::Trained { pooling: Pooling::Max, kernel: None },
        SweepModel::Trained { pooling: Pooling::Mean, kernel: None },
        SweepModel::Trained { pooling: Pooling::Max, kernel: Some(window_kernel(base.r())) },
        SweepModel::Handcrafted { kind: HandcraftedKind::ContextConv },
    ];
    let settings = SweepSettings {
        learning_rates: vec![0.1, 0.01],
        weight_decays: vec![0.0, 1e-3],
        train: TrainConfig { max_epochs: 200, patience: 40, ..TrainConfig::default() },
        ..SweepSettings::default()
    };
    let rows = sweep_training_size(&[100, 400], &base, &models, &test, &settings)?;
    for r in &rows {
        println!("N={:<5} {:<26} {:<10} {:<12} {:.4}", r.n, r.method, r.order, r.pooling, r.auroc);
    }
    let out = std::env::temp_dir().join("milbench-sweep-n.csv");
    write_results_csv(&rows, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
