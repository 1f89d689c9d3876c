use nalgebra::{DMatrix, DVector};

use super::{projection_design, Basis, FairModel, FitInfo, ModelKind};
use crate::error::{DflError, Result};
use crate::linalg::{generalized_eigen, min_eigenvalue, spd_solve};

/// Eigenvalues below `-PSD_TOL` reject a covariance matrix.
pub const PSD_TOL: f64 = 1e-8;

/// Leading generalized eigenvectors of `(HᵀΣH, HᵀH)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaSubspace {
    /// `k × q`, column `j` is `α_j`.
    pub coeff_vectors: DMatrix<f64>,
    /// Descending.
    pub eigenvalues: DVector<f64>,
    pub basis: DMatrix<f64>,
    pub jittered: bool,
}

impl PcaSubspace {
    /// `p × q` projection directions `v_j = H α_j`, each of unit norm.
    pub fn directions(&self) -> DMatrix<f64> {
        &self.basis * &self.coeff_vectors
    }

    pub fn q(&self) -> usize {
        self.coeff_vectors.ncols()
    }
}

/// Distributed fair PCA: directions `v = Hα` maximizing `vᵀΣv` subject to
/// `‖v‖ = 1`, i.e. the top-`q` solutions of `HᵀΣHα = λHᵀHα`.
pub fn dfpca_fit(h: &DMatrix<f64>, sigma_x: &DMatrix<f64>, q: usize) -> Result<PcaSubspace> {
    let p = h.nrows();
    let k = h.ncols();
    if sigma_x.shape() != (p, p) {
        return Err(DflError::Dimension(format!("Σ is {:?}, H has {p} rows", sigma_x.shape())));
    }
    if k == 0 {
        return Err(DflError::NoFairHypotheses { m: 0 });
    }
    if q == 0 || q > k {
        return Err(DflError::InvalidArgument(format!("q = {q} must be in 1..={k}")));
    }
    crate::hypothesis::check_symmetric(sigma_x)?;
    let min_eig = min_eigenvalue(sigma_x);
    if min_eig < -PSD_TOL {
        return Err(DflError::NotPsd(min_eig));
    }
    let a = h.transpose() * (sigma_x * h);
    let b = h.transpose() * h;
    let (values, vecs, jittered) = generalized_eigen(&a, &b)?;

    let mut coeffs = DMatrix::zeros(k, q);
    for j in 0..q {
        let mut alpha = vecs.column(j).into_owned();
        let v = h * &alpha;
        let norm = v.norm();
        if norm > 0.0 {
            alpha /= norm;
        }
        // sign: largest-magnitude entry of Hα positive
        let v = h * &alpha;
        if v[v.iamax()] < 0.0 {
            alpha = -alpha;
        }
        coeffs.set_column(j, &alpha);
    }
    Ok(PcaSubspace { coeff_vectors: coeffs, eigenvalues: values.rows(0, q).into_owned(), basis: h.clone(), jittered })
}

/// Ridge regression on the projected features `Z = X V` (plus an optional
/// constant column): `w = (ZᵀZ + λI)⁻¹ ZᵀY`.
pub fn pca_ridge_fit(
    sub: &PcaSubspace,
    x: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    intercept: bool,
) -> Result<FairModel> {
    let mut m = projected_ridge(&sub.directions(), x, y, lambda, intercept)?;
    m.kind = ModelKind::DfpcaRidge;
    m.info.jittered |= sub.jittered;
    Ok(m)
}

pub(crate) fn projected_ridge(
    v: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    intercept: bool,
) -> Result<FairModel> {
    if x.ncols() != v.nrows() || x.nrows() != y.len() {
        return Err(DflError::Dimension(format!(
            "directions are {}x{}, X is {}x{}, Y has {}",
            v.nrows(),
            v.ncols(),
            x.nrows(),
            x.ncols(),
            y.len()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(DflError::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let z = projection_design(x, v, intercept);
    let d = z.ncols();
    let a = z.transpose() * &z + DMatrix::identity(d, d) * lambda;
    let b = z.transpose() * DVector::from_column_slice(y);
    let (alpha, jittered) = spd_solve(&((&a + a.transpose()) * 0.5), &b, lambda > 0.0)?;
    Ok(FairModel {
        alpha,
        basis: Basis::Projection { directions: v.clone(), intercept },
        lambda,
        kind: ModelKind::DfpcaRidge,
        info: FitInfo { iterations: 1, converged: true, jittered, objective_trace: Vec::new() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::generate_linear;
    use crate::learners::dfrr_fit;
    use crate::linalg::covariance_matrix;

    #[test]
    fn diagonal_covariance_identity_basis() {
        let h = DMatrix::identity(2, 2);
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![3., 1.]));
        let sub = dfpca_fit(&h, &sigma, 1).unwrap();
        assert!((sub.eigenvalues[0] - 3.0).abs() < 1e-12);
        let v = sub.directions();
        assert!((v[(0, 0)] - 1.0).abs() < 1e-12 && v[(1, 0)].abs() < 1e-12);
    }

    #[test]
    fn full_rank_eigenvalues_sum_to_trace() {
        let x = generate_linear(30, 5, 1.0, 50).unwrap().weights;
        let sigma = covariance_matrix(&x);
        let h = generate_linear(4, 5, 1.0, 51).unwrap().weights.transpose();
        let sub = dfpca_fit(&h, &sigma, 4).unwrap();
        let hth = h.transpose() * &h;
        let target = hth.clone().lu().solve(&(h.transpose() * &sigma * &h)).unwrap().trace();
        assert!((sub.eigenvalues.sum() - target).abs() < 1e-8);
        for w in sub.eigenvalues.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn residuals_normalization_and_orthogonality() {
        let x = generate_linear(25, 6, 1.0, 52).unwrap().weights;
        let sigma = covariance_matrix(&x);
        let h = generate_linear(5, 6, 1.0, 53).unwrap().weights.transpose();
        let sub = dfpca_fit(&h, &sigma, 3).unwrap();
        let a = h.transpose() * &sigma * &h;
        let b = h.transpose() * &h;
        for j in 0..3 {
            let al = sub.coeff_vectors.column(j);
            let res = &a * al - (&b * al) * sub.eigenvalues[j];
            assert!(res.norm() <= 1e-8, "residual {}", res.norm());
            assert!(((&h * al).norm() - 1.0).abs() < 1e-10);
            for i in 0..j {
                let ai = sub.coeff_vectors.column(i);
                assert!((ai.transpose() * &b * al)[0].abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn argument_errors() {
        let h = DMatrix::identity(2, 2);
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1., 1.]));
        assert!(dfpca_fit(&h, &sigma, 3).is_err());
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1., -0.1]));
        assert!(matches!(dfpca_fit(&h, &bad, 1), Err(DflError::NotPsd(_))));
    }

    #[test]
    fn full_subspace_matches_dfrr_without_regularization() {
        // with q = k, ridge on XHA reproduces the least-squares fit over span(H)
        let x = generate_linear(20, 5, 1.0, 54).unwrap().weights;
        let y: Vec<f64> = (0..20).map(|i| (x[(i, 0)] + x[(i, 2)] > 0.0) as u8 as f64).collect();
        let h = generate_linear(4, 5, 1.0, 55).unwrap().weights.transpose();
        let sub = dfpca_fit(&h, &covariance_matrix(&x), 4).unwrap();
        let pca = pca_ridge_fit(&sub, &x, &y, 0.0, false).unwrap();
        let rr = dfrr_fit(&h, &x, &y, 0.0).unwrap();
        assert!((pca.predict(&x).unwrap() - rr.predict(&x).unwrap()).amax() <= 1e-6);
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let h = DMatrix::identity(2, 2);
        let sigma = DMatrix::from_row_slice(2, 2, &[2., 1., 1., 2.]);
        let v = dfpca_fit(&h, &sigma, 2).unwrap().directions();
        for j in 0..2 {
            let c = v.column(j);
            assert!(c[c.iamax()] > 0.0);
        }
    }
}
