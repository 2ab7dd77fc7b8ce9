//! Analytic gradients of the full objective against central differences.

use rada::experiment::{grad_check_suite, ExperimentConfig};

fn main() -> rada::error::Result<()> {
    let cfg = ExperimentConfig::default();
    println!(
        "{:>5} {:>4} {:>10} {:>10} {:>10} {:>10}",
        "seed", "dir", "lambda_adv", "theta_f", "theta_y", "theta_d"
    );
    for seed in 0..3 {
        for row in grad_check_suite(&cfg, seed, 6)? {
            let r = row.report;
            println!(
                "{seed:>5} {:>4} {:>10} {:>10.2e} {:>10.2e} {:>10.2e}",
                row.direction.as_str(),
                row.lambda_adv,
                r.g_f,
                r.g_y,
                r.g_d
            );
        }
    }
    Ok(())
}
