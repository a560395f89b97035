//! Closed-form parameter choices for each pipeline, evaluated against the
//! Bayes ceiling on one test set.

use milbench::datagen::sample_dataset;
use milbench::eval::auroc;
use milbench::models::handcrafted_model;
use milbench::{BayesModel, GenParams, HandcraftedKind};

fn main() -> milbench::Result<()> {
    for r in [1, 3] {
        let params = GenParams { window: r, ..GenParams::default() }.with_seed(11);
        let test = sample_dataset(&params, 1000)?;
        let bayes = auroc(&BayesModel::new(params)?.score_dataset(&test)?)?;
        println!("R={r}: Bayes {bayes:.4}");
        for kind in HandcraftedKind::all() {
            let spec = handcrafted_model(&params, kind)?;
            let a = auroc(&spec.score_dataset(&test)?)?;
            println!("  {:<22} {:<34} {a:.4} ({:+.4})", kind.name(), spec.label(), a - bayes);
        }
    }
    Ok(())
}
