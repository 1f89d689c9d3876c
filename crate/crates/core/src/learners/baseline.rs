use nalgebra::DMatrix;

use super::logistic::fit_newton;
use super::pca::projected_ridge;
use super::{dfpca_fit, dfrr_fit, FairModel, ModelKind, NewtonOptions};
use crate::error::Result;
use crate::linalg::covariance_matrix;

/// Unconstrained learners in the raw feature space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineKind {
    Ridge,
    Logistic(NewtonOptions),
    /// Top-`q` principal directions, then ridge with an intercept column.
    PcaRidge { q: usize, intercept: bool },
}

pub fn baseline_fit(kind: BaselineKind, x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<FairModel> {
    let identity = DMatrix::identity(x.ncols(), x.ncols());
    match kind {
        BaselineKind::Ridge => {
            let mut m = dfrr_fit(&identity, x, y, lambda)?;
            m.kind = ModelKind::BaselineRidge;
            Ok(m)
        }
        BaselineKind::Logistic(opts) => fit_newton(&identity, x, y, lambda, opts, ModelKind::BaselineLogistic),
        BaselineKind::PcaRidge { q, intercept } => {
            let sub = dfpca_fit(&identity, &covariance_matrix(x), q)?;
            let mut m = projected_ridge(&sub.directions(), x, y, lambda, intercept)?;
            m.kind = ModelKind::BaselinePcaRidge;
            Ok(m)
        }
    }
}
