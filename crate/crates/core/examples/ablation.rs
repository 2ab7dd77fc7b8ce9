//! Five-arm ablation on the default shifted task.
//!
//! ```text
//! cargo run --release --example ablation -- [seeds...]
//! ```

use std::time::Instant;

use rada::experiment::{ablate, Arm, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: Vec<u64> = std::env::args()
        .skip(1)
        .map(|s| s.parse())
        .collect::<Result<_, _>>()?;
    let seeds = if seeds.is_empty() {
        vec![1, 2, 3, 4, 5]
    } else {
        seeds
    };
    let cfg = ExperimentConfig::default();
    let start = Instant::now();
    let table = ablate(&cfg, &Arm::ABLATION, &seeds)?;

    println!(
        "{:<16} {:>8} {:>7} {:>9} {:>9} {:>6}",
        "method", "acc", "sd", "kl_dy", "kl_yd", "pad"
    );
    for r in &table.rows {
        let kl = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<16} {:>8.4} {:>7.4} {:>9} {:>9} {:>6.3}",
            r.arm,
            r.acc_mean,
            r.acc_sd,
            kl(r.kl_dy_mean),
            kl(r.kl_yd_mean),
            r.pad_mean
        );
    }
    println!("\nper seed (target accuracy / kl_dy):");
    for arm in Arm::ABLATION {
        let cells: Vec<String> = table
            .summaries(arm)
            .iter()
            .map(|s| {
                format!(
                    "{:.3}/{}",
                    s.target_acc.unwrap_or(f64::NAN),
                    s.kl_dy.map_or("-".into(), |k| format!("{k:.3}"))
                )
            })
            .collect();
        println!("{:<16} {}", arm.label(), cells.join("  "));
    }
    println!("\n{} runs in {:.1?}", table.runs.len(), start.elapsed());
    Ok(())
}
