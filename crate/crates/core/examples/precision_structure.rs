//! Class-relationship structure read off output-layer weights: closed-form
//! precision, the iterative oracle, partial correlations and both divergences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rada::linalg::Matrix;
use rada::structure::{
    kl_precision, precision_from_weights, precision_oracle_with, structure_loss, OracleSettings,
    StructureDirection,
};

fn print_matrix(name: &str, m: &Matrix) {
    println!("{name}:");
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:8.4}")).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> rada::error::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (d, k) = (10, 4);
    let w_y = Matrix::from_fn(d, k, |_, _| rng.sample(rand_distr::StandardNormal));
    // a discriminator head that shares part of the label head's structure
    let w_d = Matrix::from_fn(d, k, |i, j| {
        0.7 * w_y[(i, j)] + 0.5 * rng.sample::<f64, _>(rand_distr::StandardNormal)
    });

    let closed = precision_from_weights(&w_y, 1e-6)?;
    let (oracle, steps) = precision_oracle_with(&w_y, OracleSettings::default())?;
    let gap = closed.omega.sub(&oracle.omega)?.frobenius_norm() / oracle.omega.frobenius_norm();
    print_matrix("Omega_y (closed form)", &closed.omega);
    println!("oracle converged in {steps} steps, relative Frobenius gap {gap:.2e}\n");

    let omega_d = precision_from_weights(&w_d, 1e-6)?;
    print_matrix(
        "partial correlations of G_y",
        &closed.partial_correlations(),
    );
    print_matrix(
        "partial correlations of G_d",
        &omega_d.partial_correlations(),
    );

    for dir in StructureDirection::ALL {
        let kl = kl_precision(&closed, &omega_d, dir)?;
        let reg = structure_loss(&w_y, &w_d, dir, 1e-6)?;
        println!(
            "{dir}: exact KL {kl:.6}, weight-space regularizer {:.6}",
            reg.value
        );
    }
    let floor = structure_loss(&w_y, &w_y, StructureDirection::DToY, 1e-6)?.value;
    println!("regularizer with identical heads: {floor:.6} (K = {k})");
    Ok(())
}
