//! Dense solvers shared by the learners.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{DflError, Result};

/// Relative jitter added to rank-deficient Gram-type matrices.
pub const JITTER_SCALE: f64 = 1e-10;
/// Pivot ratio below which a Cholesky factor is treated as rank deficient.
const PIVOT_RATIO: f64 = 1e-12;

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Numerical rank from singular values.
pub fn rank(a: &DMatrix<f64>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let tol = smax * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    sv.iter().filter(|&&s| s > tol).count()
}

fn well_conditioned_cholesky(a: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let chol = a.clone().cholesky()?;
    let d = chol.l_dirty().diagonal();
    let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v * v), hi.max(v * v)));
    (lo > PIVOT_RATIO * hi && lo.is_finite()).then_some(chol)
}

/// Solves a symmetric positive (semi)definite system. When the matrix is
/// numerically rank deficient and `allow_jitter` is set, `JITTER_SCALE ·
/// trace / dim` is added to the diagonal. Returns the solution and whether
/// jitter was applied. One step of iterative refinement is applied against
/// the unjittered matrix.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, allow_jitter: bool) -> Result<(DVector<f64>, bool)> {
    let dim = a.nrows();
    if let Some(chol) = well_conditioned_cholesky(a) {
        let mut x = chol.solve(b);
        let r = b - a * &x;
        x += chol.solve(&r);
        return Ok((x, false));
    }
    if !allow_jitter {
        return Err(DflError::Singular { rank: rank(a), dim });
    }
    let eps = JITTER_SCALE * a.trace().abs().max(f64::MIN_POSITIVE) / dim as f64;
    let jittered = a + DMatrix::identity(dim, dim) * eps;
    match jittered.cholesky() {
        Some(chol) => Ok((chol.solve(b), true)),
        None => Err(DflError::Singular { rank: rank(a), dim }),
    }
}

/// Generalized symmetric-definite eigenproblem `A v = λ B v`, eigenvalues
/// descending. Columns are normalized so that `vᵀ B v = 1`. Returns the
/// eigenpairs and whether `B` needed jitter.
pub fn generalized_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>, bool)> {
    let dim = b.nrows();
    let (chol, jittered) = match well_conditioned_cholesky(b) {
        Some(c) => (c, false),
        None => {
            let eps = JITTER_SCALE * b.trace().abs().max(f64::MIN_POSITIVE) / dim as f64;
            let c = (b + DMatrix::identity(dim, dim) * eps)
                .cholesky()
                .ok_or(DflError::Singular { rank: rank(b), dim })?;
            (c, true)
        }
    };
    let l = chol.l();
    // C = L⁻¹ A L⁻ᵀ
    let linv_a = l.solve_lower_triangular(a).ok_or(DflError::Singular { rank: rank(b), dim })?;
    let c = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or(DflError::Singular { rank: rank(b), dim })?;
    let eig = SymmetricEigen::new(symmetrize(&c));
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(dim, order.iter().map(|&i| eig.eigenvalues[i]));
    let y = DMatrix::from_fn(dim, dim, |r, c| eig.eigenvectors[(r, order[c])]);
    let vecs = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or(DflError::Singular { rank: rank(b), dim })?;
    Ok((values, vecs, jittered))
}

/// Population covariance matrix of the columns of `x`.
pub fn covariance_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mean[j]);
    symmetrize(&(centered.transpose() * &centered / n))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(a)).eigenvalues.min()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_solve_recovers_solution() {
        let a = DMatrix::from_row_slice(2, 2, &[4., 1., 1., 3.]);
        let x = DVector::from_vec(vec![1., -2.]);
        let (got, jit) = spd_solve(&a, &(&a * &x), false).unwrap();
        assert!(!jit);
        assert!((got - x).norm() < 1e-14);
    }

    #[test]
    fn singular_without_jitter_reports_rank() {
        let a = DMatrix::from_row_slice(2, 2, &[1., 1., 1., 1.]);
        match spd_solve(&a, &DVector::from_vec(vec![1., 1.]), false) {
            Err(DflError::Singular { rank, dim }) => assert_eq!((rank, dim), (1, 2)),
            other => panic!("{other:?}"),
        }
        let (_, jit) = spd_solve(&a, &DVector::from_vec(vec![1., 1.]), true).unwrap();
        assert!(jit);
    }

    #[test]
    fn generalized_eigen_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1., 6.]));
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1., 2.]));
        let (vals, vecs, _) = generalized_eigen(&a, &b).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
        let v0 = vecs.column(0);
        assert!(((v0.transpose() * &b * v0)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn covariance_matrix_population() {
        let x = DMatrix::from_row_slice(2, 1, &[0., 2.]);
        assert_eq!(covariance_matrix(&x)[(0, 0)], 1.0);
    }
}
