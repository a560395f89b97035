//! Paired bootstrap of AUROC differences on a shared test set.

use milbench::datagen::sample_dataset;
use milbench::eval::{auroc, paired_bootstrap};
use milbench::models::handcrafted_model;
use milbench::{BayesModel, GenParams, HandcraftedKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> milbench::Result<()> {
    let params = GenParams::default().with_seed(21);
    let test = sample_dataset(&params, 1000)?;
    let bayes = BayesModel::new(params)?.score_dataset(&test)?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let noisy = bayes.map_scores(|s| s + noise.sample(&mut rng));

    let others = [
        ("context-conv", handcrafted_model(&params, HandcraftedKind::ContextConv)?.score_dataset(&test)?),
        ("instance-max", handcrafted_model(&params, HandcraftedKind::InstanceMax)?.score_dataset(&test)?),
        ("noisy bayes", noisy),
    ];
    println!("Bayes AUROC {:.4}", auroc(&bayes)?);
    for (name, scores) in &others {
        let r = paired_bootstrap(&bayes, scores, 500, 0)?;
        println!(
            "bayes - {name:<13} {:+.4} [{:+.4}, {:+.4}]{}",
            r.mean_diff,
            r.ci_low,
            r.ci_high,
            if r.excludes_zero() { "  *" } else { "" }
        );
    }
    Ok(())
}
