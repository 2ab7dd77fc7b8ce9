//! Epoch-by-epoch training with a checkpoint in the middle. The resumed run
//! matches an uninterrupted one bit for bit.

use rada::datagen::{generate_pair, GenConfig};
use rada::trainer::{fit, load_checkpoint, save_checkpoint, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pair = generate_pair(&GenConfig {
        per_class: 40,
        ..GenConfig::default()
    })?;
    let cfg = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let init = cfg.init_model(pair.source.feature_dim(), pair.source.classes)?;

    let mut trainer = Trainer::new(init.clone(), &pair.source, &pair.target, cfg.clone())?;
    for _ in 0..4 {
        let r = trainer.run_epoch()?;
        println!(
            "epoch {} target acc {:.3}",
            r.epoch,
            r.target_acc.unwrap_or(f64::NAN)
        );
    }
    let dir = std::env::temp_dir().join("rada-resume-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("checkpoint.json");
    save_checkpoint(&trainer.checkpoint(), &path)?;
    println!("checkpoint written to {}", path.display());

    let mut resumed =
        Trainer::from_checkpoint(load_checkpoint(&path)?, &pair.source, &pair.target)?;
    resumed.run()?;
    let (model, report) = resumed.into_parts();
    let (reference, reference_report) = fit(init, &pair.source, &pair.target, &cfg)?;
    println!(
        "{} epochs, identical to uninterrupted run: {}",
        report.epochs.len(),
        model == reference && report == reference_report
    );
    Ok(())
}
