//! The closed-form posterior on fresh data, checked against the product-form
//! oracle on a few bags, and its AUROC at several window lengths.

use milbench::bayes::naive_log_odds;
use milbench::datagen::sample_dataset;
use milbench::eval::auroc;
use milbench::{BayesModel, GenParams};

fn main() -> milbench::Result<()> {
    let params = GenParams::default().with_seed(7);
    let model = BayesModel::new(params)?;
    let ds = sample_dataset(&params, 1000)?;

    for bag in ds.bags.iter().take(3) {
        println!(
            "y={} fast log-odds {:+.6}  naive {:+.6}  posterior {:.4}",
            bag.label as u8,
            model.log_odds(bag)?,
            naive_log_odds(&model, bag)?,
            model.posterior(bag)?
        );
    }
    println!("Bayes AUROC (R=3): {:.4}", auroc(&model.score_dataset(&ds)?)?);

    for r in [1, 2, 5] {
        let p = GenParams { window: r, ..params };
        let d = sample_dataset(&p, 1000)?;
        println!("Bayes AUROC (R={r}): {:.4}", auroc(&BayesModel::new(p)?.score_dataset(&d)?)?);
    }
    Ok(())
}
