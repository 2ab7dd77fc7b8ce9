//! Inter-class dependency structure read off output-layer weights.
//!
//! The rows of an output weight matrix `W` (`d × K`, bias row included) are modeled
//! as draws from `N(0, Ω⁻¹)`. The maximum-likelihood precision is `Ω = d·(WᵀW)⁻¹`,
//! computed in closed form by [`precision_from_weights`] and, independently, by the
//! projected-gradient [`precision_oracle`].
//!
//! [`structure_loss`] is the relationship regularizer used during training. It is
//! the weight-space form of the precision discrepancy and deliberately omits the
//! additive constants, so its floor is `K` rather than `0`. The exact divergences
//! live in [`kl_precision`] and are used for monitoring only.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, matmul, shrink_to_pd_factored, Matrix, SymmetricEigen};

/// Symmetric positive-definite `K × K` precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionMatrix {
    pub omega: Matrix,
    /// Multiple of the identity added to the Gram matrix before inversion.
    pub shrink_used: f64,
}

impl PrecisionMatrix {
    /// Wraps an existing matrix after checking it is symmetric and PD.
    pub fn new(omega: Matrix) -> Result<Self> {
        cholesky(&omega)?;
        Ok(Self {
            omega,
            shrink_used: 0.0,
        })
    }

    pub fn classes(&self) -> usize {
        self.omega.rows()
    }

    pub fn partial_correlations(&self) -> Matrix {
        partial_correlations(&self.omega)
    }
}

/// Which way the precision discrepancy is measured.
///
/// `DToY` trains with `D_KL(Ω_y‖Ω_d)`, `YToD` with `D_KL(Ω_d‖Ω_y)`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
pub enum StructureDirection {
    #[default]
    #[serde(rename = "d2y", alias = "d_to_y")]
    DToY,
    #[serde(rename = "y2d", alias = "y_to_d")]
    YToD,
}

impl StructureDirection {
    pub const ALL: [StructureDirection; 2] = [StructureDirection::DToY, StructureDirection::YToD];

    pub fn as_str(self) -> &'static str {
        match self {
            StructureDirection::DToY => "d2y",
            StructureDirection::YToD => "y2d",
        }
    }
}

impl fmt::Display for StructureDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StructureDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "d2y" | "d_to_y" => Ok(StructureDirection::DToY),
            "y2d" | "y_to_d" => Ok(StructureDirection::YToD),
            other => Err(Error::config(
                "direction",
                format!("unknown direction `{other}` (expected d2y or y2d)"),
            )),
        }
    }
}

/// Closed-form precision `Ω = d·(WᵀW + c·I)⁻¹` where `d` is the row count of `w`
/// (bias row included) and `c` is the smallest shrinkage that makes the Gram
/// matrix factorizable.
pub fn precision_from_weights(w: &Matrix, eps0: f64) -> Result<PrecisionMatrix> {
    check_weights(w)?;
    let d = w.rows() as f64;
    let (_, factor, c) = shrink_to_pd_factored(&w.gram(), eps0)?;
    Ok(PrecisionMatrix {
        omega: factor.inverse().scale(d),
        shrink_used: c,
    })
}

fn check_weights(w: &Matrix) -> Result<()> {
    if w.cols() < 2 {
        return Err(Error::dim(format!(
            "need at least 2 classes, got {}",
            w.cols()
        )));
    }
    Ok(())
}

/// `−d·logdet(Ω) + Tr(W Ω Wᵀ)`, the negative log-likelihood being minimized.
pub fn precision_objective(w: &Matrix, omega: &Matrix) -> Result<f64> {
    if omega.rows() != w.cols() || !omega.is_square() {
        return Err(Error::dim(format!(
            "Ω is {:?} but W has {} columns",
            omega.shape(),
            w.cols()
        )));
    }
    let d = w.rows() as f64;
    let logdet = cholesky(omega)?.logdet();
    let tr = matmul(w, omega)?
        .as_slice()
        .iter()
        .zip(w.as_slice())
        .map(|(a, b)| a * b)
        .sum::<f64>();
    Ok(-d * logdet + tr)
}

/// Settings for [`precision_oracle`].
#[derive(Debug, Clone, Copy)]
pub struct OracleSettings {
    pub grad_tol: f64,
    pub max_steps: usize,
    pub eig_floor: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_steps: 50_000,
            eig_floor: 1e-8,
        }
    }
}

/// Iterative reference solver for the precision MLE.
///
/// Projected gradient descent on `Ω` starting from `I`, with Barzilai–Borwein step
/// sizes and a non-monotone backtracking safeguard. Each iterate is projected onto
/// the PD cone by clipping eigenvalues at `eig_floor`, and the inverse needed by the
/// gradient `−d·Ω⁻¹ + WᵀW` comes from the same eigen-decomposition. No Cholesky
/// factorization is involved.
pub fn precision_oracle(w: &Matrix) -> Result<PrecisionMatrix> {
    precision_oracle_with(w, OracleSettings::default()).map(|(p, _)| p)
}

/// As [`precision_oracle`], also returning the number of steps taken.
pub fn precision_oracle_with(w: &Matrix, s: OracleSettings) -> Result<(PrecisionMatrix, usize)> {
    check_weights(w)?;
    let k = w.cols();
    let d = w.rows() as f64;
    let h = matmul(&w.transpose(), w)?.symmetrize();

    struct Iterate {
        omega: Matrix,
        grad: Matrix,
        value: f64,
    }

    let evaluate = |omega: &Matrix| -> Result<Iterate> {
        let eig = SymmetricEigen::new(omega)?;
        let clipped: Vec<f64> = eig.values.iter().map(|&l| l.max(s.eig_floor)).collect();
        let eig = SymmetricEigen {
            values: clipped,
            vectors: eig.vectors,
        };
        let omega = eig.recompose(|l| l);
        let inv = eig.recompose(|l| 1.0 / l);
        let logdet: f64 = eig.values.iter().map(|l| l.ln()).sum();
        let tr: f64 = (0..k)
            .flat_map(|i| (0..k).map(move |j| (i, j)))
            .map(|(i, j)| omega[(i, j)] * h[(j, i)])
            .sum();
        let grad = Matrix::from_fn(k, k, |i, j| h[(i, j)] - d * inv[(i, j)]).symmetrize();
        Ok(Iterate {
            omega,
            grad,
            value: -d * logdet + tr,
        })
    };

    let dot = |a: &Matrix, b: &Matrix| -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| x * y)
            .sum()
    };

    let mut cur = evaluate(&Matrix::identity(k))?;
    let mut recent = vec![cur.value];
    let mut step = 1.0 / h.frobenius_norm().max(d);
    for it in 0..s.max_steps {
        let gnorm = cur.grad.frobenius_norm();
        if gnorm <= s.grad_tol {
            return Ok((
                PrecisionMatrix {
                    omega: cur.omega,
                    shrink_used: 0.0,
                },
                it,
            ));
        }
        let reference = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let slack = 1e-12 * (1.0 + reference.abs());
        let mut alpha = step;
        let mut next = None;
        for _ in 0..60 {
            let mut trial = cur.omega.clone();
            trial.axpy(-alpha, &cur.grad);
            let cand = evaluate(&trial)?;
            let decrease = 1e-4 * dot(&cur.grad, &cur.omega.sub(&cand.omega)?);
            if cand.value.is_finite() && cand.value <= reference - decrease + slack {
                next = Some(cand);
                break;
            }
            alpha *= 0.5;
        }
        let Some(next) = next else {
            return Err(Error::OracleDidNotConverge {
                steps: it,
                grad_norm: gnorm,
            });
        };
        let sk = next.omega.sub(&cur.omega)?;
        let yk = next.grad.sub(&cur.grad)?;
        let sy = dot(&sk, &yk);
        step = if sy > 0.0 {
            dot(&sk, &sk) / sy
        } else {
            alpha * 2.0
        };
        recent.push(next.value);
        if recent.len() > 10 {
            recent.remove(0);
        }
        cur = next;
    }
    Err(Error::OracleDidNotConverge {
        steps: s.max_steps,
        grad_norm: cur.grad.frobenius_norm(),
    })
}

/// Exact precision-matrix divergence.
///
/// `DToY` evaluates `Tr(Ω_y⁻¹Ω_d) − logdet(Ω_y⁻¹Ω_d) − K` with `a = Ω_y, b = Ω_d`;
/// `YToD` evaluates `Tr(Ω_d⁻¹Ω_y) − logdet(Ω_d⁻¹Ω_y) − K`. The log-determinant of
/// the product is split as `logdet Ω_b − logdet Ω_a` so it never factors a
/// non-symmetric matrix.
pub fn kl_precision(
    a: &PrecisionMatrix,
    b: &PrecisionMatrix,
    dir: StructureDirection,
) -> Result<f64> {
    if a.omega.shape() != b.omega.shape() {
        return Err(Error::dim(format!(
            "precision shapes {:?} and {:?}",
            a.omega.shape(),
            b.omega.shape()
        )));
    }
    let (inner, outer) = match dir {
        StructureDirection::DToY => (&a.omega, &b.omega),
        StructureDirection::YToD => (&b.omega, &a.omega),
    };
    let k = inner.rows() as f64;
    let fi = cholesky(inner)?;
    let fo = cholesky(outer)?;
    let tr = fi.solve(outer)?.trace();
    Ok(tr - (fo.logdet() - fi.logdet()) - k)
}

/// Value and gradients of the relationship regularizer.
#[derive(Debug, Clone)]
pub struct StructureLoss {
    pub value: f64,
    pub grad_y: Matrix,
    pub grad_d: Matrix,
    /// Shrinkage applied to `W_yᵀW_y` and `W_dᵀW_d` respectively.
    pub shrink_y: f64,
    pub shrink_d: f64,
}

impl StructureLoss {
    pub fn shrinkage_triggered(&self) -> bool {
        self.shrink_y > 0.0 || self.shrink_d > 0.0
    }
}

/// Relationship regularizer between the label-predictor output weights `w_y`
/// (`d_y × K`) and discriminator output weights `w_d` (`d_d × K`).
///
/// With `A_y = W_yᵀW_y`, `A_d = W_dᵀW_d` (each shrunk to PD if needed):
///
/// * `DToY`: `Tr(W_y A_d⁻¹ W_yᵀ) − (d_y/d_d)·(logdet A_y − logdet A_d)`
/// * `YToD`: `Tr(W_d A_y⁻¹ W_dᵀ) − (d_d/d_y)·(logdet A_d − logdet A_y)`
pub fn structure_loss(
    w_y: &Matrix,
    w_d: &Matrix,
    dir: StructureDirection,
    eps0: f64,
) -> Result<StructureLoss> {
    if w_y.cols() != w_d.cols() {
        return Err(Error::dim(format!(
            "label predictor has {} classes, discriminator {}",
            w_y.cols(),
            w_d.cols()
        )));
    }
    check_weights(w_y)?;
    match dir {
        StructureDirection::DToY => {
            let t = weight_space_discrepancy(w_y, w_d, eps0)?;
            Ok(StructureLoss {
                value: t.value,
                grad_y: t.grad_primary,
                grad_d: t.grad_reference,
                shrink_y: t.shrink_primary,
                shrink_d: t.shrink_reference,
            })
        }
        StructureDirection::YToD => {
            let t = weight_space_discrepancy(w_d, w_y, eps0)?;
            Ok(StructureLoss {
                value: t.value,
                grad_y: t.grad_reference,
                grad_d: t.grad_primary,
                shrink_y: t.shrink_reference,
                shrink_d: t.shrink_primary,
            })
        }
    }
}

struct Discrepancy {
    value: f64,
    grad_primary: Matrix,
    grad_reference: Matrix,
    shrink_primary: f64,
    shrink_reference: f64,
}

/// `Tr(P A_R⁻¹ Pᵀ) − (d_P/d_R)(logdet A_P − logdet A_R)`.
///
/// Gradients: `∂/∂P = 2P A_R⁻¹ − 2(d_P/d_R) P A_P⁻¹` and
/// `∂/∂R = −2R A_R⁻¹ (PᵀP) A_R⁻¹ + 2(d_P/d_R) R A_R⁻¹`.
fn weight_space_discrepancy(p: &Matrix, r: &Matrix, eps0: f64) -> Result<Discrepancy> {
    let ratio = p.rows() as f64 / r.rows() as f64;
    let gram_p = p.gram();
    let (_, fac_p, shrink_p) = shrink_to_pd_factored(&gram_p, eps0)?;
    let (_, fac_r, shrink_r) = shrink_to_pd_factored(&r.gram(), eps0)?;
    let inv_p = fac_p.inverse();
    let inv_r = fac_r.inverse();

    let p_inv_r = matmul(p, &inv_r)?;
    let trace: f64 = p_inv_r
        .as_slice()
        .iter()
        .zip(p.as_slice())
        .map(|(a, b)| a * b)
        .sum();
    let value = trace - ratio * (fac_p.logdet() - fac_r.logdet());

    let mut grad_p = p_inv_r.scale(2.0);
    grad_p.axpy(-2.0 * ratio, &matmul(p, &inv_p)?);

    let r_inv_r = matmul(r, &inv_r)?;
    let mut grad_r = matmul(&matmul(&r_inv_r, &gram_p)?, &inv_r)?.scale(-2.0);
    grad_r.axpy(2.0 * ratio, &r_inv_r);

    Ok(Discrepancy {
        value,
        grad_primary: grad_p,
        grad_reference: grad_r,
        shrink_primary: shrink_p,
        shrink_reference: shrink_r,
    })
}

/// `ρ_ij = −ω_ij / √(ω_ii ω_jj)` off the diagonal, `1` on it.
pub fn partial_correlations(omega: &Matrix) -> Matrix {
    let k = omega.rows();
    let diag = omega.diag();
    let mut rho = Matrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else {
            -omega[(i, j)] / (diag[i] * diag[j]).sqrt()
        }
    });
    for i in 0..k {
        for j in 0..i {
            rho[(i, j)] = rho[(j, i)];
        }
    }
    rho
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::inverse_pd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn pm(m: Matrix) -> PrecisionMatrix {
        PrecisionMatrix::new(m).unwrap()
    }

    fn rel_frob(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm()
    }

    fn fd_matrix(f: impl Fn(&Matrix) -> f64, x: &Matrix, h: f64) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                let mut p = x.clone();
                p[(i, j)] += h;
                let mut m = x.clone();
                m[(i, j)] -= h;
                out[(i, j)] = (f(&p) - f(&m)) / (2.0 * h);
            }
        }
        out
    }

    #[test]
    fn closed_form_examples() {
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let p = precision_from_weights(&w, 1e-6).unwrap();
        assert_eq!(p.omega, Matrix::identity(2).scale(3.0));
        assert_eq!(p.shrink_used, 0.0);

        let w = Matrix::from_diag(&[2.0, 1.0]);
        let p = precision_from_weights(&w, 1e-6).unwrap();
        assert_eq!(p.omega, Matrix::from_diag(&[0.5, 2.0]));
    }

    #[test]
    fn closed_form_shrinks_rank_deficient_weights() {
        // d = 2 rows for K = 3 classes: the Gram matrix is singular
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = gaussian(2, 3, &mut rng);
        let p = precision_from_weights(&w, 1e-6).unwrap();
        assert!(p.shrink_used > 0.0);
        assert!(cholesky(&p.omega).is_ok());
    }

    #[test]
    fn oracle_examples() {
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let p = precision_oracle(&w).unwrap();
        assert!(
            p.omega
                .sub(&Matrix::identity(2).scale(3.0))
                .unwrap()
                .max_abs()
                <= 1e-4
        );

        let w = Matrix::from_diag(&[2.0, 1.0]);
        let p = precision_oracle(&w).unwrap();
        assert!(
            p.omega
                .sub(&Matrix::from_diag(&[0.5, 2.0]))
                .unwrap()
                .max_abs()
                <= 1e-4
        );
    }

    #[test]
    fn oracle_objective_not_better_than_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let k = rng.random_range(3..=6);
            let d = rng.random_range((k + 2).max(4)..=16);
            let w = gaussian(d, k, &mut rng);
            let closed = precision_from_weights(&w, 1e-6).unwrap();
            let oracle = precision_oracle(&w).unwrap();
            let f_closed = precision_objective(&w, &closed.omega).unwrap();
            let f_oracle = precision_objective(&w, &oracle.omega).unwrap();
            assert!(f_oracle <= f_closed + 1e-6);
            assert!(f_closed <= f_oracle + 1e-6);
            assert!(
                rel_frob(&closed.omega, &oracle.omega) <= 1e-5,
                "d={d} k={k}"
            );
        }
    }

    #[test]
    fn oracle_reports_non_convergence() {
        let w = Matrix::from_diag(&[2.0, 1.0]);
        let settings = OracleSettings {
            max_steps: 2,
            ..OracleSettings::default()
        };
        assert!(matches!(
            precision_oracle_with(&w, settings),
            Err(Error::OracleDidNotConverge { steps: 2, .. })
        ));
    }

    #[test]
    fn kl_examples() {
        let i2 = pm(Matrix::identity(2));
        let two = pm(Matrix::identity(2).scale(2.0));
        for dir in StructureDirection::ALL {
            assert!(kl_precision(&i2, &i2, dir).unwrap().abs() <= 1e-10);
        }
        let fwd = kl_precision(&i2, &two, StructureDirection::DToY).unwrap();
        assert!((fwd - (2.0 - 2.0 * 2f64.ln())).abs() <= 1e-12);
        assert!((fwd - 0.613706).abs() <= 1e-6);
        let rev = kl_precision(&two, &i2, StructureDirection::DToY).unwrap();
        assert!((rev - 0.386294).abs() <= 1e-6);
        let other_dir = kl_precision(&i2, &two, StructureDirection::YToD).unwrap();
        assert!((other_dir - rev).abs() <= 1e-12);

        let i3 = pm(Matrix::identity(3));
        assert!(matches!(
            kl_precision(&i2, &i3, StructureDirection::DToY),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn structure_loss_examples() {
        let i2 = Matrix::identity(2);
        let l = structure_loss(&i2, &i2, StructureDirection::DToY, 1e-6).unwrap();
        assert!((l.value - 2.0).abs() <= 1e-12);

        let l = structure_loss(&i2, &i2.scale(2.0), StructureDirection::DToY, 1e-6).unwrap();
        assert!((l.value - (0.5 + 16f64.ln())).abs() <= 1e-12);
        assert!((l.value - 3.272589).abs() <= 1e-6);
    }

    #[test]
    fn structure_loss_gradients_match_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(30 + seed);
            let wy = gaussian(6, 3, &mut rng);
            let wd = gaussian(5, 3, &mut rng);
            for dir in StructureDirection::ALL {
                let l = structure_loss(&wy, &wd, dir, 1e-6).unwrap();
                let fy = fd_matrix(
                    |m| structure_loss(m, &wd, dir, 1e-6).unwrap().value,
                    &wy,
                    1e-5,
                );
                let fdd = fd_matrix(
                    |m| structure_loss(&wy, m, dir, 1e-6).unwrap().value,
                    &wd,
                    1e-5,
                );
                let ey = l.grad_y.sub(&fy).unwrap().max_abs() / fy.max_abs().max(1.0);
                let ed = l.grad_d.sub(&fdd).unwrap().max_abs() / fdd.max_abs().max(1.0);
                assert!(ey <= 1e-4 && ed <= 1e-4, "seed {seed} {dir}: {ey:e} {ed:e}");
            }
        }
    }

    #[test]
    fn partial_correlation_examples() {
        let omega = Matrix::from_rows(&[vec![2.0, -1.0], vec![-1.0, 2.0]]).unwrap();
        let rho = partial_correlations(&omega);
        assert_eq!(rho[(0, 1)], 0.5);
        assert_eq!(rho[(1, 0)], 0.5);
        assert_eq!(rho[(0, 0)], 1.0);

        let rho = partial_correlations(&Matrix::from_diag(&[1.0, 3.0, 5.0]));
        assert_eq!(rho, Matrix::identity(3));
    }

    #[test]
    fn direction_parsing() {
        assert_eq!(
            "d2y".parse::<StructureDirection>().unwrap(),
            StructureDirection::DToY
        );
        assert_eq!(
            "y_to_d".parse::<StructureDirection>().unwrap(),
            StructureDirection::YToD
        );
        assert!("sideways".parse::<StructureDirection>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn weights() -> impl Strategy<Value = Matrix> {
            (2usize..6, 2usize..8, any::<u64>()).prop_map(|(k, extra, seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                gaussian(k + extra, k, &mut rng)
            })
        }

        fn pd_pair() -> impl Strategy<Value = (Matrix, Matrix)> {
            (2usize..6, any::<u64>()).prop_map(|(k, seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (
                    gaussian(k + 3, k, &mut rng).gram().add_diag(0.1),
                    gaussian(k + 3, k, &mut rng).gram().add_diag(0.1),
                )
            })
        }

        proptest! {
            #[test]
            fn kl_non_negative((a, b) in pd_pair()) {
                let (a, b) = (pm(a), pm(b));
                for dir in StructureDirection::ALL {
                    prop_assert!(kl_precision(&a, &b, dir).unwrap() >= -1e-10);
                    prop_assert!(kl_precision(&a, &a, dir).unwrap().abs() <= 1e-9);
                }
            }

            #[test]
            fn scale_covariance(w in weights(), c in 0.2f64..5.0) {
                let base = precision_from_weights(&w, 1e-6).unwrap();
                let scaled = precision_from_weights(&w.scale(c), 1e-6).unwrap();
                prop_assume!(base.shrink_used == 0.0 && scaled.shrink_used == 0.0);
                let want = base.omega.scale(1.0 / (c * c));
                prop_assert!(rel_frob(&scaled.omega, &want) <= 1e-9);
            }

            #[test]
            fn partial_correlation_properties((a, _) in pd_pair(), s in 0.01f64..100.0) {
                let rho = partial_correlations(&a);
                prop_assert_eq!(rho.asymmetry().unwrap(), 0.0);
                prop_assert!(rho.max_abs() <= 1.0 + 1e-12);
                let scaled = partial_correlations(&a.scale(s));
                prop_assert!(scaled.sub(&rho).unwrap().max_abs() <= 1e-10);
            }

            #[test]
            fn regularizer_floor_is_class_count(w in weights()) {
                let l = structure_loss(&w, &w, StructureDirection::DToY, 1e-6).unwrap();
                prop_assert!((l.value - w.cols() as f64).abs() <= 1e-9);
            }

            #[test]
            fn closed_form_inverts_gram(w in weights()) {
                let p = precision_from_weights(&w, 1e-6).unwrap();
                prop_assume!(p.shrink_used == 0.0);
                let back = inverse_pd(&p.omega).unwrap().scale(w.rows() as f64);
                prop_assert!(rel_frob(&back, &w.gram()) <= 1e-7);
            }
        }
    }
}
