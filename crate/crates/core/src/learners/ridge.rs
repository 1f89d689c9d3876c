use nalgebra::{DMatrix, DVector};

use super::{Basis, FairModel, FitInfo, ModelKind};
use crate::error::{DflError, Result};
use crate::linalg::{rank, spd_solve};

/// Distributed fair ridge regression: `α = (HᵀXᵀXH + λI)⁻¹ HᵀXᵀY`.
///
/// `h` is `p × k` with one hypothesis per column. The system is solved by
/// Cholesky; with `λ = 0` a rank-deficient system is an error.
pub fn dfrr_fit(h: &DMatrix<f64>, x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<FairModel> {
    let k = h.ncols();
    if k == 0 {
        return Err(DflError::NoFairHypotheses { m: 0 });
    }
    if x.ncols() != h.nrows() || x.nrows() != y.len() {
        return Err(DflError::Dimension(format!(
            "H is {}x{}, X is {}x{}, Y has {}",
            h.nrows(),
            k,
            x.nrows(),
            x.ncols(),
            y.len()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(DflError::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let (a, b) = normal_system(h, x, y, lambda);
    if lambda == 0.0 {
        let r = rank(&a);
        if r < k {
            return Err(DflError::Singular { rank: r, dim: k });
        }
    }
    let (alpha, jittered) = spd_solve(&a, &b, false)?;
    Ok(FairModel {
        alpha,
        basis: Basis::Linear(h.clone()),
        lambda,
        kind: ModelKind::Dfrr,
        info: FitInfo { iterations: 1, converged: true, jittered, objective_trace: Vec::new() },
    })
}

/// `(HᵀXᵀXH + λI, HᵀXᵀY)`, formed through the `p × p` Gram matrix.
pub(crate) fn normal_system(
    h: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let k = h.ncols();
    let xtx = x.transpose() * x;
    let a = h.transpose() * (xtx * h);
    let a = (&a + a.transpose()) * 0.5 + DMatrix::identity(k, k) * lambda;
    let xty = x.transpose() * DVector::from_column_slice(y);
    (a, h.transpose() * xty)
}

/// `Σ (⟨XHα⟩_i - y_i)² + λ‖α‖²`, the objective whose stationary point is
/// the closed form above.
pub fn dfrr_objective(h: &DMatrix<f64>, x: &DMatrix<f64>, y: &[f64], lambda: f64, alpha: &DVector<f64>) -> f64 {
    let r = x * (h * alpha) - DVector::from_column_slice(y);
    r.norm_squared() + lambda * alpha.norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::generate_linear;

    #[test]
    fn zero_labels_give_zero_alpha() {
        let x = generate_linear(6, 3, 1.0, 1).unwrap().weights;
        let h = generate_linear(2, 3, 1.0, 2).unwrap().weights.transpose();
        let m = dfrr_fit(&h, &x, &[0.0; 6], 0.5).unwrap();
        assert!(m.alpha.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn identity_basis_is_least_squares() {
        // 4x2 instance; OLS oracle from the 2x2 normal equations by Cramer's rule
        let x = DMatrix::from_row_slice(4, 2, &[1., 0., 1., 1., 1., 2., 1., 3.]);
        let y = [1.0, 2.0, 2.0, 4.0];
        let m = dfrr_fit(&DMatrix::identity(2, 2), &x, &y, 0.0).unwrap();
        let (s11, s12, s22) = (4.0, 6.0, 14.0);
        let (b1, b2) = (9.0, 18.0);
        let det = s11 * s22 - s12 * s12;
        let want = [(s22 * b1 - s12 * b2) / det, (s11 * b2 - s12 * b1) / det];
        assert!((m.alpha[0] - want[0]).abs() < 1e-12, "{} vs {}", m.alpha[0], want[0]);
        assert!((m.alpha[1] - want[1]).abs() < 1e-12);
    }

    #[test]
    fn huge_lambda_shrinks_alpha() {
        let x = generate_linear(10, 3, 1.0, 4).unwrap().weights;
        let h = generate_linear(4, 3, 1.0, 5).unwrap().weights.transpose();
        let y: Vec<f64> = (0..10).map(|i| (i as f64).cos()).collect();
        let m = dfrr_fit(&h, &x, &y, 1e6).unwrap();
        let (_, b) = normal_system(&h, &x, &y, 0.0);
        assert!(m.alpha.norm() <= b.norm() / 1e6);
    }

    #[test]
    fn singular_without_regularization() {
        // k = 3 > p = 2: HᵀXᵀXH has rank 2
        let x = generate_linear(5, 2, 1.0, 6).unwrap().weights;
        let h = generate_linear(3, 2, 1.0, 7).unwrap().weights.transpose();
        match dfrr_fit(&h, &x, &[1.0; 5], 0.0) {
            Err(DflError::Singular { rank, dim }) => assert_eq!((rank, dim), (2, 3)),
            other => panic!("{other:?}"),
        }
        assert!(dfrr_fit(&h, &x, &[1.0; 5], 0.1).is_ok());
    }

    #[test]
    fn residual_within_tolerance() {
        let x = generate_linear(20, 5, 1.0, 8).unwrap().weights;
        let h = generate_linear(4, 5, 1.0, 9).unwrap().weights.transpose();
        let y: Vec<f64> = (0..20).map(|i| (i % 2) as f64).collect();
        let m = dfrr_fit(&h, &x, &y, 0.3).unwrap();
        let (a, b) = normal_system(&h, &x, &y, 0.3);
        assert!((a * &m.alpha - &b).norm() <= 1e-8 * (1.0 + b.norm()));
    }

    #[test]
    fn perturbations_never_improve_objective() {
        use rand::{Rng, SeedableRng};
        let x = generate_linear(15, 4, 1.0, 10).unwrap().weights;
        let h = generate_linear(3, 4, 1.0, 11).unwrap().weights.transpose();
        let y: Vec<f64> = (0..15).map(|i| ((i * 7) % 3) as f64).collect();
        let m = dfrr_fit(&h, &x, &y, 0.7).unwrap();
        let base = dfrr_objective(&h, &x, &y, 0.7, &m.alpha);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let mut d = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            d *= 1e-3 / d.norm();
            assert!(dfrr_objective(&h, &x, &y, 0.7, &(&m.alpha + d)) >= base);
        }
    }
}
