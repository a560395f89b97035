//! Bayes and handcrafted AUROC as the shift grows, with a fresh test set per
//! shift.

use milbench::eval::{sweep_delta, SweepModel, SweepSettings};
use milbench::{GenParams, HandcraftedKind};

fn main() -> milbench::Result<()> {
    let models = [
        SweepModel::Handcrafted { kind: HandcraftedKind::InstanceMax },
        SweepModel::Handcrafted { kind: HandcraftedKind::ContextConv },
    ];
    let rows = sweep_delta(&[0.0, 0.5, 1.0, 2.0, 3.0], &GenParams::default(), &models, 400, 1000, &SweepSettings::default())?;
    for r in &rows {
        println!("delta={:<4} {:<26} {:.4}", r.delta, r.method, r.auroc);
    }
    Ok(())
}
