use nalgebra::{DMatrix, DVector};

use super::{Basis, FairModel, FitInfo, ModelKind};
use crate::error::{DflError, Result};
use crate::hypothesis::{check_symmetric, KernelSpec};
use crate::linalg::spd_solve;

/// Distributed fair kernel ridge regression:
/// `α = [Cᵀ(K+λI)ᵀ(K+λI)C]⁻¹ Cᵀ(K+λI)ᵀ Y`.
///
/// `coeffs` is `n × k` (column `t` holds the coefficients of `h_{r_t}`).
/// `train_x` and `kernel` are kept so the model can score new points.
pub fn dfkrr_fit(
    gram: &DMatrix<f64>,
    coeffs: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    train_x: &DMatrix<f64>,
    kernel: KernelSpec,
) -> Result<FairModel> {
    check_symmetric(gram)?;
    let n = gram.nrows();
    if coeffs.nrows() != n || y.len() != n || train_x.nrows() != n {
        return Err(DflError::Dimension(format!(
            "K is {n}x{n}, C is {}x{}, Y has {}, X has {} rows",
            coeffs.nrows(),
            coeffs.ncols(),
            y.len(),
            train_x.nrows()
        )));
    }
    if coeffs.ncols() == 0 {
        return Err(DflError::NoFairHypotheses { m: 0 });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(DflError::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let (a, b) = kernel_normal_system(gram, coeffs, y, lambda);
    let (alpha, jittered) = spd_solve(&a, &b, true)?;
    Ok(FairModel {
        alpha,
        basis: Basis::Kernel { coeffs: coeffs.clone(), train_x: train_x.clone(), kernel },
        lambda,
        kind: ModelKind::Dfkrr,
        info: FitInfo { iterations: 1, converged: true, jittered, objective_trace: Vec::new() },
    })
}

/// `(BᵀB, BᵀY)` with `B = (K + λI) C`.
pub(crate) fn kernel_normal_system(
    gram: &DMatrix<f64>,
    coeffs: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = gram.nrows();
    let b = (gram + DMatrix::identity(n, n) * lambda) * coeffs;
    let a = b.transpose() * &b;
    let rhs = b.transpose() * DVector::from_column_slice(y);
    ((&a + a.transpose()) * 0.5, rhs)
}
