//! Learners over a fair hypothesis space.
//!
//! Every fitted model has the form `f = Σ_t α_t h_{r_t}`, a coefficient vector
//! bound to the basis of returned hypotheses.

mod baseline;
mod kernel;
mod logistic;
mod pca;
mod ridge;

pub use baseline::{baseline_fit, BaselineKind};
pub use kernel::dfkrr_fit;
pub use logistic::{dfgr_fit, dfgr_gradient, dfgr_objective, NewtonOptions};
pub use pca::{dfpca_fit, pca_ridge_fit, PcaSubspace};
pub use ridge::{dfrr_fit, dfrr_objective};

use nalgebra::{DMatrix, DVector};

use crate::error::{DflError, Result};
use crate::hypothesis::{cross_gram, KernelSpec};

/// Default classification threshold on scores.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Dfrr,
    Dfkrr,
    Dfgr,
    DfpcaRidge,
    BaselineRidge,
    BaselineLogistic,
    BaselinePcaRidge,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Dfrr => 16,
            ModelKind::Dfkrr => 17,
            ModelKind::Dfgr => 18,
            ModelKind::DfpcaRidge => 19,
            ModelKind::BaselineRidge => 32,
            ModelKind::BaselineLogistic => 33,
            ModelKind::BaselinePcaRidge => 34,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            16 => ModelKind::Dfrr,
            17 => ModelKind::Dfkrr,
            18 => ModelKind::Dfgr,
            19 => ModelKind::DfpcaRidge,
            32 => ModelKind::BaselineRidge,
            33 => ModelKind::BaselineLogistic,
            34 => ModelKind::BaselinePcaRidge,
            _ => return None,
        })
    }

    /// Logistic models output probabilities.
    pub fn is_probabilistic(self) -> bool {
        matches!(self, ModelKind::Dfgr | ModelKind::BaselineLogistic)
    }
}

/// The hypotheses a model's coefficients refer to.
#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    /// `p × k`, column `t` is `h_{r_t}`.
    Linear(DMatrix<f64>),
    /// `n × k` coefficients over the training points.
    Kernel { coeffs: DMatrix<f64>, train_x: DMatrix<f64>, kernel: KernelSpec },
    /// `p × q` projection directions; scores are `[X V, 1] α` when
    /// `intercept` is set.
    Projection { directions: DMatrix<f64>, intercept: bool },
}

impl Basis {
    pub fn k(&self) -> usize {
        match self {
            Basis::Linear(h) => h.ncols(),
            Basis::Kernel { coeffs, .. } => coeffs.ncols(),
            Basis::Projection { directions, intercept } => directions.ncols() + *intercept as usize,
        }
    }
}

/// Diagnostics from the Newton solver.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitInfo {
    pub iterations: usize,
    pub converged: bool,
    pub jittered: bool,
    /// Objective after each accepted step (first entry is the start point).
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairModel {
    pub alpha: DVector<f64>,
    pub basis: Basis,
    pub lambda: f64,
    pub kind: ModelKind,
    pub info: FitInfo,
}

impl FairModel {
    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    /// Raw linear score before any link function.
    pub fn linear_scores(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        match &self.basis {
            Basis::Linear(h) => {
                check_cols(x, h.nrows())?;
                Ok(x * (h * &self.alpha))
            }
            Basis::Kernel { coeffs, train_x, kernel } => {
                check_cols(x, train_x.ncols())?;
                let kx = cross_gram(x, train_x, *kernel)?;
                Ok(kx * (coeffs * &self.alpha))
            }
            Basis::Projection { directions, intercept } => {
                check_cols(x, directions.nrows())?;
                let z = projection_design(x, directions, *intercept);
                Ok(z * &self.alpha)
            }
        }
    }

    /// Model output: probabilities for logistic kinds, scores otherwise.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let z = self.linear_scores(x)?;
        Ok(if self.kind.is_probabilistic() { z.map(logistic) } else { z })
    }

    /// The linear weight vector `Hα` when the model is linear in `x`.
    pub fn weight_vector(&self) -> Option<DVector<f64>> {
        match &self.basis {
            Basis::Linear(h) => Some(h * &self.alpha),
            _ => None,
        }
    }
}

fn check_cols(x: &DMatrix<f64>, p: usize) -> Result<()> {
    if x.ncols() != p {
        return Err(DflError::Dimension(format!("data has {} features, model expects {p}", x.ncols())));
    }
    Ok(())
}

pub(crate) fn projection_design(x: &DMatrix<f64>, v: &DMatrix<f64>, intercept: bool) -> DMatrix<f64> {
    let z = x * v;
    if !intercept {
        return z;
    }
    let q = z.ncols();
    DMatrix::from_fn(z.nrows(), q + 1, |i, j| if j < q { z[(i, j)] } else { 1.0 })
}

/// `1 / (1 + e^{-z})`, evaluated without overflow.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `score >= threshold`.
pub fn classify(scores: &DVector<f64>, threshold: f64) -> Vec<u8> {
    scores.iter().map(|&v| (v >= threshold) as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_model(alpha: Vec<f64>, h: DMatrix<f64>, kind: ModelKind) -> FairModel {
        FairModel { alpha: DVector::from_vec(alpha), basis: Basis::Linear(h), lambda: 0.0, kind, info: FitInfo::default() }
    }

    #[test]
    fn zero_alpha_scores() {
        let x = DMatrix::from_row_slice(2, 2, &[1., 2., 3., 4.]);
        let h = DMatrix::from_row_slice(2, 1, &[1., 1.]);
        let m = linear_model(vec![0.0], h.clone(), ModelKind::Dfrr);
        assert!(m.predict(&x).unwrap().iter().all(|&v| v == 0.0));
        let g = linear_model(vec![0.0], h, ModelKind::Dfgr);
        assert!(g.predict(&x).unwrap().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn single_hypothesis_scaling_and_hand_scores() {
        // h = (1, -1), x rows (3, 1), (0, 2): Xh = (2, -2); α = 2 -> (4, -4)
        let x = DMatrix::from_row_slice(2, 2, &[3., 1., 0., 2.]);
        let h = DMatrix::from_row_slice(2, 1, &[1., -1.]);
        let m = linear_model(vec![2.0], h, ModelKind::Dfrr);
        assert_eq!(m.predict(&x).unwrap().as_slice(), &[4.0, -4.0]);
        assert_eq!(classify(&m.predict(&x).unwrap(), DEFAULT_THRESHOLD), vec![1, 0]);
    }

    #[test]
    fn predict_dimension_mismatch() {
        let m = linear_model(vec![1.0], DMatrix::from_row_slice(2, 1, &[1., 1.]), ModelKind::Dfrr);
        assert!(m.predict(&DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn classify_threshold_is_inclusive() {
        let s = DVector::from_vec(vec![0.49, 0.5, 0.51]);
        assert_eq!(classify(&s, 0.5), vec![0, 1, 1]);
    }

    #[test]
    fn logistic_is_stable() {
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(-1000.0) >= 0.0 && logistic(-1000.0) < 1e-300);
        assert_eq!(logistic(1000.0), 1.0);
    }

    #[test]
    fn kind_tags_round_trip() {
        for k in [
            ModelKind::Dfrr,
            ModelKind::Dfkrr,
            ModelKind::Dfgr,
            ModelKind::DfpcaRidge,
            ModelKind::BaselineRidge,
            ModelKind::BaselineLogistic,
            ModelKind::BaselinePcaRidge,
        ] {
            assert_eq!(ModelKind::from_tag(k.tag()), Some(k));
        }
    }
}
