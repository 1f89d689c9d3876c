use nalgebra::{DMatrix, DVector};

use super::{logistic, Basis, FairModel, FitInfo, ModelKind};
use crate::error::{DflError, Result};
use crate::linalg::spd_solve;

/// Damped Newton settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Stop when `‖J'‖∞ <= tol`.
    pub tol: f64,
    /// Initial step length; halved until the objective does not increase.
    pub step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-8, step: 1.0 }
    }
}

const MAX_HALVINGS: usize = 40;
const MAX_CONSECUTIVE_INCREASES: usize = 5;
const ROUNDING_SLACK: f64 = 4.0 * f64::EPSILON;

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Negative log-likelihood plus `λ‖Hα‖²`.
pub fn dfgr_objective(h: &DMatrix<f64>, x: &DMatrix<f64>, y: &[f64], lambda: f64, alpha: &DVector<f64>) -> f64 {
    let w = h * alpha;
    let z = x * &w;
    let nll: f64 = z.iter().zip(y).map(|(&zi, &yi)| softplus(zi) - yi * zi).sum();
    nll + lambda * w.norm_squared()
}

/// `HᵀXᵀ(p - Y) + 2λHᵀHα`, the analytic gradient of [`dfgr_objective`].
pub fn dfgr_gradient(h: &DMatrix<f64>, x: &DMatrix<f64>, y: &[f64], lambda: f64, alpha: &DVector<f64>) -> DVector<f64> {
    let w = h * alpha;
    let z = x * &w;
    let r = DVector::from_iterator(y.len(), z.iter().zip(y).map(|(&zi, &yi)| logistic(zi) - yi));
    h.transpose() * (x.transpose() * r + &w * (2.0 * lambda))
}

/// `Hᵀ(XᵀMX + 2λI)H` with `M = diag(p_i(1 - p_i))`.
fn hessian(h: &DMatrix<f64>, x: &DMatrix<f64>, lambda: f64, alpha: &DVector<f64>) -> DMatrix<f64> {
    let p = x.ncols();
    let z = x * (h * alpha);
    let mut xm = x.clone();
    for (i, mut row) in xm.row_iter_mut().enumerate() {
        let pi = logistic(z[i]);
        row *= pi * (1.0 - pi);
    }
    let inner = x.transpose() * xm + DMatrix::identity(p, p) * (2.0 * lambda);
    let hess = h.transpose() * (inner * h);
    (&hess + hess.transpose()) * 0.5
}

/// Distributed fair logistic regression by damped Newton iterations
/// `α ← α - t (J'')⁻¹ J'` with backtracking on `t`.
pub fn dfgr_fit(
    h: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    opts: NewtonOptions,
) -> Result<FairModel> {
    fit_newton(h, x, y, lambda, opts, ModelKind::Dfgr)
}

pub(crate) fn fit_newton(
    h: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    opts: NewtonOptions,
    kind: ModelKind,
) -> Result<FairModel> {
    let k = h.ncols();
    if k == 0 {
        return Err(DflError::NoFairHypotheses { m: 0 });
    }
    if x.ncols() != h.nrows() || x.nrows() != y.len() {
        return Err(DflError::Dimension(format!(
            "H is {}x{k}, X is {}x{}, Y has {}",
            h.nrows(),
            x.nrows(),
            x.ncols(),
            y.len()
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(DflError::InvalidArgument(format!("logistic fit needs lambda > 0, got {lambda}")));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(DflError::InvalidArgument("logistic labels must be 0/1".into()));
    }
    if !(opts.step > 0.0) {
        return Err(DflError::InvalidArgument(format!("step must be > 0, got {}", opts.step)));
    }

    let mut alpha = DVector::zeros(k);
    let mut obj = dfgr_objective(h, x, y, lambda, &alpha);
    let mut info = FitInfo { objective_trace: vec![obj], ..Default::default() };
    let mut increases = 0;

    for iter in 0..opts.max_iter {
        let grad = dfgr_gradient(h, x, y, lambda, &alpha);
        if grad.amax() <= opts.tol {
            info.converged = true;
            info.iterations = iter;
            break;
        }
        let hess = hessian(h, x, lambda, &alpha);
        let (dir, jit) = spd_solve(&hess, &grad, true)?;
        info.jittered |= jit;

        let mut t = opts.step;
        let mut accepted = None;
        let mut last_try = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &alpha - &dir * t;
            let c_obj = dfgr_objective(h, x, y, lambda, &cand);
            // near the optimum, objective differences drop below rounding
            if c_obj.is_finite() && c_obj <= obj + ROUNDING_SLACK * obj.abs() {
                accepted = Some((cand, c_obj));
                break;
            }
            last_try = Some((cand, c_obj));
            t *= 0.5;
        }
        let (next, next_obj) = match accepted {
            Some(a) => {
                increases = 0;
                a
            }
            None => {
                let (cand, c_obj) = last_try.expect("at least one trial step");
                increases += 1;
                if increases >= MAX_CONSECUTIVE_INCREASES || !c_obj.is_finite() {
                    return Err(DflError::Diverged { iterations: iter + 1, last: cand.as_slice().to_vec() });
                }
                (cand, c_obj)
            }
        };
        let stalled = next_obj == obj && (&next - &alpha).amax() == 0.0;
        alpha = next;
        obj = next_obj;
        info.objective_trace.push(obj);
        info.iterations = iter + 1;
        if stalled {
            // no representable progress left
            info.converged = dfgr_gradient(h, x, y, lambda, &alpha).amax() <= opts.tol;
            break;
        }
    }
    if !info.converged && info.iterations == opts.max_iter {
        info.converged = dfgr_gradient(h, x, y, lambda, &alpha).amax() <= opts.tol;
    }
    Ok(FairModel { alpha, basis: Basis::Linear(h.clone()), lambda, kind, info })
}
