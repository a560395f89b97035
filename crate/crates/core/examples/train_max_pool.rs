//! Train a max-pool model under both orders on a small problem.
//!
//! cargo run --release --example train_max_pool -- [n_bags] [window]

use milbench::datagen::{sample_dataset, split_dataset};
use milbench::eval::auroc;
use milbench::models::grid_search;
use milbench::{BayesModel, GenParams, LinearScorer, ModelSpec, Order, Pooling, TrainConfig};

fn main() -> milbench::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(400);
    let r: u32 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let params = GenParams { num_features: 32, window: r, ..GenParams::default() };

    let (train, val) = split_dataset(&sample_dataset(&params.with_seed(1), n)?, 0.8, 0)?;
    let test = sample_dataset(&params.with_seed(2), 1000)?;
    println!("Bayes   {:.4}", auroc(&BayesModel::new(params)?.score_dataset(&test)?)?);

    let cfg = TrainConfig { max_epochs: 300, patience: 50, ..TrainConfig::default() };
    for order in Order::ALL {
        let template = ModelSpec::new(order, Pooling::Max, LinearScorer::zeros(params.m()));
        let out = grid_search(&template, &train, &val, &[0.1, 0.01], &[0.0, 1e-3], &cfg)?;
        println!(
            "{:<10} test {:.4}  val {:.4}  lr {} wd {} epochs {}",
            order.as_str(),
            auroc(&out.spec.score_dataset(&test)?)?,
            out.val_auroc(),
            out.learning_rate,
            out.weight_decay,
            out.log.epochs_trained
        );
    }
    Ok(())
}
