//! Trains the full method on the default shifted task and prints the curves.

use rada::datagen::{generate_pair, GenConfig};
use rada::eval::{confusion, structure_report};
use rada::trainer::{fit, TrainConfig};

fn main() -> rada::error::Result<()> {
    let pair = generate_pair(&GenConfig::default())?;
    let cfg = TrainConfig {
        epochs: 60,
        ..TrainConfig::default()
    };
    let model = cfg.init_model(pair.source.feature_dim(), pair.source.classes)?;
    let (model, report) = fit(model, &pair.source, &pair.target, &cfg)?;

    println!(
        "{:>5} {:>7} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "epoch", "l_adv", "L_y", "L_dom", "KL_dy", "src", "tgt"
    );
    for r in report.epochs.iter().step_by(10).chain(report.last()) {
        println!(
            "{:>5} {:>7.3} {:>8.4} {:>8.4} {:>8.4} {:>8.3} {:>8.3}",
            r.epoch,
            r.lambda_adv,
            r.label_loss,
            r.domain_loss,
            r.kl_dy.unwrap_or(f64::NAN),
            r.source_acc,
            r.target_acc.unwrap_or(f64::NAN)
        );
    }

    let cm = confusion(&model, &pair.target)?;
    println!("\ntarget confusion (rows true, cols predicted):");
    for row in cm.counts() {
        println!("  {row:?}");
    }
    let s = structure_report(&model, cfg.eps0)?;
    println!("final KL d2y {:.4}, y2d {:.4}", s.kl_dy, s.kl_yd);
    Ok(())
}
