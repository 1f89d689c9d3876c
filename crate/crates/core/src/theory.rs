//! Closed-form fairness and generalization bounds, and Monte Carlo
//! validators that check them at desk scale.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::{split, standardize, synth_biased};
use crate::error::{DflError, Result};
use crate::fairfilter::{estimate_cov, hard_filter};
use crate::hypothesis::{generate_linear, predict_linear};
use crate::learners::{classify, dfrr_fit, DEFAULT_THRESHOLD};
use crate::metrics::{cov_fairness, statistical_parity};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::stats;

/// Absolute slack on the sample-level covariance inequality.
pub const LEMMA2_TOL: f64 = 1e-10;
/// Absolute slack on the statistical-parity bound per trial.
pub const THEOREM4_SLACK: f64 = 0.02;
/// Maximum fraction of trials allowed to exceed the parity bound.
pub const THEOREM4_MAX_VIOLATION_RATE: f64 = 0.05;
/// Standard errors of slack granted to Monte Carlo comparisons.
pub const SE_MULTIPLIER: f64 = 3.0;

/// `√k ‖α‖ ρ / (s₀ s₁)`
pub fn sp_bound(k: usize, alpha_norm: f64, rho: f64, s0: f64, s1: f64) -> Result<f64> {
    if !(s0 > 0.0 && s0 < 1.0 && s1 > 0.0 && s1 < 1.0) || ((s0 + s1) - 1.0).abs() > 1e-9 {
        return Err(DflError::InvalidArgument(format!("group proportions ({s0}, {s1}) are degenerate")));
    }
    if alpha_norm < 0.0 || rho < 0.0 {
        return Err(DflError::InvalidArgument("alpha_norm and rho must be >= 0".into()));
    }
    Ok((k as f64).sqrt() * alpha_norm * rho / (s0 * s1))
}

/// Lower bound on the expected number of returned linear hypotheses,
/// `m (1 - σ²‖cov(x,s)‖²/ρ²)`, clamped at zero.
pub fn k_bound_linear(m: usize, sigma: f64, cov_vec_norm: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(DflError::InvalidArgument(format!("rho must be > 0, got {rho}")));
    }
    let frac = 1.0 - sigma * sigma * cov_vec_norm * cov_vec_norm / (rho * rho);
    Ok((m as f64 * frac).max(0.0))
}

/// `g = e^{c k μ² / (4 - 2c)} + e^{-c k μ² / (2 + 2c)}` with `μ = ⟨h*, x⟩`.
pub fn distortion_g(c: f64, k: usize, inner_hstar_x: f64) -> f64 {
    let a = c * k as f64 * inner_hstar_x * inner_hstar_x;
    (a / (4.0 - 2.0 * c)).exp() + (-a / (2.0 + 2.0 * c)).exp()
}

/// Tail bound on `|‖x̃‖² - ‖x‖²| >= c‖x‖²` for a projection whose columns
/// are drawn from `N(h*, I)`: `g · e^{-c²k/8}`.
pub fn distortion_bound(c: f64, k: usize, inner_hstar_x: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&c) || k == 0 {
        return Err(DflError::InvalidArgument(format!("distortion bound needs 0 <= c < 1 and k >= 1 (c={c}, k={k})")));
    }
    Ok(distortion_g(c, k, inner_hstar_x) * (-(c * c) * k as f64 / 8.0).exp())
}

/// Complexity term `2 √{[(k+1) ln(e n/(k+1)) + ln(1/δ)] / n}`.
pub fn complexity_term(n: usize, k: usize, delta: f64) -> f64 {
    let n = n as f64;
    let k1 = k as f64 + 1.0;
    2.0 * ((k1 * (std::f64::consts::E * n / k1).ln() + (1.0 / delta).ln()) / n).sqrt()
}

/// Generalization bound for the soft threshold policy:
/// `êr + T + (4/(nδ)) Σ_i g(x_i) e^{-k⟨f,x_i⟩² / (8(2+|⟨f,x_i⟩|)²)}` with
/// `c_i = |⟨f,x_i⟩| / (2 + |⟨f,x_i⟩|)` inside `g`.
///
/// `f_inner[i] = ⟨f, x_i⟩` and `hstar_inner[i] = ⟨h*, x_i⟩` for unit `f`, `x_i`.
pub fn generalization_bound(
    emp_error: f64,
    k: usize,
    delta: f64,
    f_inner: &[f64],
    hstar_inner: &[f64],
) -> Result<f64> {
    if !(delta > 0.0 && delta < 0.25) {
        return Err(DflError::InvalidArgument(format!("delta must be in (0, 1/4), got {delta}")));
    }
    if f_inner.len() != hstar_inner.len() || f_inner.is_empty() {
        return Err(DflError::Dimension(format!("{} vs {} margins", f_inner.len(), hstar_inner.len())));
    }
    let n = f_inner.len();
    let kf = k as f64;
    let tail = stats::sum(f_inner.iter().zip(hstar_inner).map(|(&fx, &hx)| {
        let a = fx.abs();
        let c = a / (2.0 + a);
        distortion_g(c, k, hx) * (-kf * fx * fx / (8.0 * (2.0 + a).powi(2))).exp()
    }));
    Ok(emp_error + complexity_term(n, k, delta) + 4.0 / (n as f64 * delta) * tail)
}

/// One evaluated grid point of a validator.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundPoint {
    pub label: String,
    pub bound: f64,
    pub empirical: f64,
    pub std_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub name: String,
    pub bound_value: f64,
    pub empirical_value: f64,
    pub trials: usize,
    pub violations: usize,
    pub violation_rate: f64,
    pub parameters: BTreeMap<String, f64>,
    pub points: Vec<BoundPoint>,
    /// Diagnostic lines that do not affect `passed`.
    pub notes: Vec<String>,
    /// Whether `bound_value` bounds a probability.
    pub probability: bool,
    pub passed: bool,
}

impl BoundReport {
    fn new(name: &str, trials: usize, parameters: BTreeMap<String, f64>) -> Self {
        Self {
            name: name.into(),
            bound_value: f64::NAN,
            empirical_value: f64::NAN,
            trials,
            violations: 0,
            violation_rate: 0.0,
            parameters,
            points: Vec::new(),
            notes: Vec::new(),
            probability: false,
            passed: false,
        }
    }

    /// Probability bounds of at least 1 say nothing.
    pub fn vacuous(&self) -> bool {
        self.probability && self.bound_value >= 1.0
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("validator,point,bound,empirical,std_error,passed\n");
        let _ = writeln!(
            out,
            "{},summary,{},{},{},{}",
            self.name, self.bound_value, self.empirical_value, self.violation_rate, self.passed
        );
        for p in &self.points {
            let _ = writeln!(out, "{},{},{},{},{},{}", self.name, p.label, p.bound, p.empirical, p.std_error, p.passed);
        }
        out
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "== {} : {}", self.name, if self.passed { "PASS" } else { "FAIL" });
        let _ = writeln!(out, "trials          {}", self.trials);
        let _ = writeln!(
            out,
            "bound           {}{}",
            self.bound_value,
            if self.vacuous() { " (vacuous)" } else { "" }
        );
        let _ = writeln!(out, "empirical       {}", self.empirical_value);
        let _ = writeln!(out, "violations      {} ({})", self.violations, self.violation_rate);
        for (k, v) in &self.parameters {
            let _ = writeln!(out, "param {k:<10} {v}");
        }
        for p in &self.points {
            let _ = writeln!(
                out,
                "  {:<28} bound {:.6} empirical {:.6} se {:.6} {}",
                p.label,
                p.bound,
                p.empirical,
                p.std_error,
                if p.passed { "ok" } else { "VIOLATED" }
            );
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Spanned-hypothesis fairness at sample level: for bases whose members all
/// satisfy `|cov(h(x), s)| <= ρ`, every `f = Hα` satisfies
/// `|cov(f(x), s)| <= √k‖α‖ρ`.
pub fn validate_lemma2(trials: usize, n: usize, p: usize, k_max: usize, rho: f64, seed: u64) -> Result<BoundReport> {
    if trials == 0 || n < 2 || p == 0 || k_max == 0 || !(rho >= 0.0) {
        return Err(DflError::InvalidArgument("validate_lemma2 arguments out of range".into()));
    }
    let outcomes: Vec<Result<(f64, f64)>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(derive_seed(seed, t), Stream::MonteCarlo);
            let k = rng.random_range(1..=k_max);
            let x = gaussian_matrix(&mut rng, n, p);
            let mut s: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
            s[0] = 0.0;
            s[1] = 1.0;
            let xs: Vec<Vec<f64>> = x.column_iter().map(|c| c.iter().copied().collect()).collect();
            let c: DVector<f64> = DVector::from_iterator(p, xs.iter().map(|col| stats::covariance(col, &s)));
            let mut h = gaussian_matrix(&mut rng, p, k);
            for mut col in h.column_iter_mut() {
                let cov = col.dot(&c);
                if rho == 0.0 {
                    let cc = c.norm_squared();
                    if cc > 0.0 {
                        col -= &c * (cov / cc);
                    }
                } else if cov.abs() > rho {
                    col *= rho / cov.abs();
                }
            }
            // every basis member must pass the third party's own filter
            let preds = crate::hypothesis::PredictionMatrix::new(h.transpose() * x.transpose())?;
            let tol_rho = if rho == 0.0 { 1e-12 } else { rho * (1.0 + 1e-12) };
            let kept = hard_filter(&preds, &s, tol_rho)?;
            if kept.k() != k {
                return Err(DflError::InvalidArgument(format!("basis construction failed ({} of {k})", kept.k())));
            }
            let alpha = gaussian_matrix(&mut rng, k, 1).column(0) * rng.random_range(0.1..10.0);
            let f: Vec<f64> = (&x * (&h * &alpha)).iter().copied().collect();
            let cov_f = estimate_cov(&f, &s)?.abs();
            let bound = (k as f64).sqrt() * alpha.norm() * rho;
            Ok((cov_f, bound))
        })
        .collect();
    let mut report = BoundReport::new(
        "lemma2",
        trials,
        params(&[("n", n as f64), ("p", p as f64), ("k_max", k_max as f64), ("rho", rho)]),
    );
    let mut max_ratio: f64 = 0.0;
    let mut max_abs_cov: f64 = 0.0;
    let mut min_slack = f64::INFINITY;
    for o in outcomes {
        let (cov_f, bound) = o?;
        if cov_f > bound + LEMMA2_TOL {
            report.violations += 1;
        }
        min_slack = min_slack.min(bound - cov_f);
        max_abs_cov = max_abs_cov.max(cov_f);
        if bound > 0.0 {
            max_ratio = max_ratio.max(cov_f / bound);
        }
    }
    report.violation_rate = report.violations as f64 / trials as f64;
    report.empirical_value = max_ratio;
    report.bound_value = 1.0;
    report.notes.push(format!("max |cov(f,s)|/bound = {max_ratio:.6}"));
    report.notes.push(format!("min slack = {min_slack:e}"));
    report.notes.push(format!("max |cov(f,s)| = {max_abs_cov:e}"));
    report.parameters.insert("max_slack_ratio".into(), max_ratio);
    report.passed = report.violations == 0;
    Ok(report)
}

/// Empirical check of `E[k] >= m(1 - σ²‖cov(x,s)‖²/ρ²)` on synthetic data.
#[allow(clippy::too_many_arguments)]
pub fn validate_lemma3(
    trials: usize,
    m: usize,
    n: usize,
    p: usize,
    sigma: f64,
    rho: f64,
    bias: f64,
    seed: u64,
) -> Result<BoundReport> {
    let ks = lemma3_counts(trials, m, n, p, sigma, &[rho], bias, seed)?;
    let (counts, bounds): (Vec<f64>, Vec<f64>) = ks.into_iter().map(|(k, b)| (k[0], b[0])).unzip();
    let mean_k = stats::mean(&counts);
    let se = stats::std_error(&counts);
    let mean_bound = stats::mean(&bounds);
    let mut report = BoundReport::new(
        "lemma3",
        trials,
        params(&[("m", m as f64), ("n", n as f64), ("p", p as f64), ("sigma", sigma), ("rho", rho), ("bias", bias)]),
    );
    report.bound_value = mean_bound;
    report.empirical_value = mean_k;
    let passed = mean_k >= mean_bound - SE_MULTIPLIER * se;
    report.points.push(BoundPoint {
        label: format!("sigma={sigma},rho={rho}"),
        bound: mean_bound,
        empirical: mean_k,
        std_error: se,
        passed,
    });
    report.violations = (!passed) as usize;
    report.violation_rate = report.violations as f64;
    report.passed = passed;
    Ok(report)
}

/// Returned counts `k` per trial for every `ρ` in `rhos`, with the
/// per-trial bound values. Trials share data and hypotheses across `ρ`.
#[allow(clippy::too_many_arguments)]
pub fn lemma3_counts(
    trials: usize,
    m: usize,
    n: usize,
    p: usize,
    sigma: f64,
    rhos: &[f64],
    bias: f64,
    seed: u64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    if trials == 0 || m == 0 {
        return Err(DflError::InvalidArgument("lemma3 needs trials >= 1 and m >= 1".into()));
    }
    (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let ts = derive_seed(seed, t);
            let raw = synth_biased(n, p, bias, ts)?;
            let all: Vec<usize> = (0..n).collect();
            let (ds, _) = standardize(&raw, &all)?;
            let c = ds.feature_sensitive_cov();
            let cnorm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            let batch = generate_linear(m, p, sigma, ts)?;
            let preds = predict_linear(&batch, &ds.features)?;
            let s = ds.sensitive_f64();
            let mut ks = Vec::with_capacity(rhos.len());
            let mut bs = Vec::with_capacity(rhos.len());
            for &rho in rhos {
                ks.push(hard_filter(&preds, &s, rho)?.k() as f64);
                bs.push(k_bound_linear(m, sigma, cnorm, rho)?);
            }
            Ok((ks, bs))
        })
        .collect()
}

/// Monte Carlo check of the distortion tail bound for projections with
/// columns drawn from `N(h*, I)`. `x` is a fixed random unit vector in
/// `dim` dimensions and `h* = hstar_scale · x`.
pub fn validate_lemma5(
    trials: usize,
    k: usize,
    c_grid: &[f64],
    hstar_scale: f64,
    dim: usize,
    seed: u64,
) -> Result<BoundReport> {
    if trials == 0 || k == 0 || dim == 0 || c_grid.is_empty() {
        return Err(DflError::InvalidArgument("validate_lemma5 arguments out of range".into()));
    }
    let mut rng = stream_rng(seed, Stream::MonteCarlo);
    let mut x = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
    x /= x.norm();
    let hstar = &x * hstar_scale;
    let inner = hstar.dot(&x);
    let bounds: Vec<f64> = c_grid.iter().map(|&c| distortion_bound(c, k, inner)).collect::<Result<_>>()?;

    let distortions: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut r = stream_rng(derive_seed(seed, t + 1), Stream::MonteCarlo);
            let mut sq = 0.0;
            for _ in 0..k {
                // column h ~ N(h*, I); ⟨h, x⟩
                let mut dot = 0.0;
                for j in 0..dim {
                    let z: f64 = StandardNormal.sample(&mut r);
                    dot += (hstar[j] + z) * x[j];
                }
                sq += dot * dot;
            }
            // ‖x̃‖² with x̃ = Hᵀx/√k and ‖x‖ = 1
            (sq / k as f64 - 1.0).abs()
        })
        .collect();

    let mut report = BoundReport::new(
        "lemma5",
        trials,
        params(&[("k", k as f64), ("hstar_scale", hstar_scale), ("dim", dim as f64), ("inner_hstar_x", inner)]),
    );
    report.probability = true;
    let tf = trials as f64;
    for (&c, &b) in c_grid.iter().zip(&bounds) {
        let hits = distortions.iter().filter(|&&d| d >= c).count();
        let emp = hits as f64 / tf;
        let bp = b.clamp(0.0, 1.0);
        let se = (bp * (1.0 - bp) / tf).sqrt();
        let passed = emp <= b + SE_MULTIPLIER * se;
        if !passed {
            report.violations += 1;
        }
        report.points.push(BoundPoint { label: format!("k={k},c={c},h*={hstar_scale}"), bound: b, empirical: emp, std_error: se, passed });
    }
    report.bound_value = bounds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    report.empirical_value = report.points.iter().map(|p| p.empirical).fold(0.0, f64::max);
    report.violation_rate = report.violations as f64 / c_grid.len() as f64;
    report.passed = report.violations == 0;
    Ok(report)
}

/// Settings for the statistical-parity bound diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem4Config {
    pub trials: usize,
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub sigma: f64,
    pub rho: f64,
    pub lambda: f64,
    pub bias: f64,
    pub seed: u64,
}

impl Default for Theorem4Config {
    fn default() -> Self {
        Self { trials: 500, n: 400, p: 5, m: 200, sigma: 1.0, rho: 0.1, lambda: 1.0, bias: 1.0, seed: 4 }
    }
}

/// Per-trial outcome of the parity diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem4Trial {
    pub sp: f64,
    pub bound: f64,
    pub cov_fs: f64,
    pub k: usize,
}

/// Fits DFRR on biased synthetic data (positively quadrant dependent by
/// construction) and compares test-set parity against
/// `√k‖α‖ρ/(ŝ₀ŝ₁) + THEOREM4_SLACK`. Violations are counted over trials
/// with `cov(f(x), s) >= 0`; the sign of the covariance across all trials
/// is reported alongside.
pub fn validate_theorem4(cfg: &Theorem4Config) -> Result<(BoundReport, Vec<Theorem4Trial>)> {
    if cfg.trials == 0 {
        return Err(DflError::InvalidArgument("trials must be >= 1".into()));
    }
    let results: Vec<Result<Option<Theorem4Trial>>> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| theorem4_trial(cfg, derive_seed(cfg.seed, t), t))
        .collect();
    let mut trials = Vec::new();
    let mut skipped = 0;
    for r in results {
        match r? {
            Some(t) => trials.push(t),
            None => skipped += 1,
        }
    }
    let mut report = BoundReport::new(
        "theorem4",
        trials.len(),
        params(&[
            ("n", cfg.n as f64),
            ("p", cfg.p as f64),
            ("m", cfg.m as f64),
            ("sigma", cfg.sigma),
            ("rho", cfg.rho),
            ("lambda", cfg.lambda),
            ("bias", cfg.bias),
        ]),
    );
    let consistent: Vec<&Theorem4Trial> = trials.iter().filter(|t| t.cov_fs >= 0.0).collect();
    report.violations = consistent.iter().filter(|t| t.sp > t.bound + THEOREM4_SLACK).count();
    report.violation_rate =
        if consistent.is_empty() { 1.0 } else { report.violations as f64 / consistent.len() as f64 };
    report.probability = true;
    let all_violations = trials.iter().filter(|t| t.sp > t.bound + THEOREM4_SLACK).count();
    report.notes.push(format!(
        "{} of {} trials have cov(f(x),s) >= 0; {all_violations} violations over all trials",
        consistent.len(),
        trials.len()
    ));
    let sps: Vec<f64> = trials.iter().map(|t| t.sp).collect();
    let bounds: Vec<f64> = trials.iter().map(|t| t.bound).collect();
    report.empirical_value = stats::mean(&sps);
    report.bound_value = stats::mean(&bounds);
    let positive = trials.iter().filter(|t| t.cov_fs > 0.0).count() as f64 / trials.len().max(1) as f64;
    report.parameters.insert("fraction_cov_positive".into(), positive);
    report.notes.push(format!("fraction of trials with cov(f(x),s) > 0: {positive:.4}"));
    if skipped > 0 {
        report.notes.push(format!("{skipped} trials skipped (no fair hypotheses)"));
    }
    report.passed = !consistent.is_empty() && report.violation_rate <= THEOREM4_MAX_VIOLATION_RATE;
    Ok((report, trials))
}

fn theorem4_trial(cfg: &Theorem4Config, seed: u64, trial_id: u64) -> Result<Option<Theorem4Trial>> {
    let raw = synth_biased(cfg.n, cfg.p, cfg.bias, seed)?;
    let sp_idx = split(cfg.n, 0.75, seed, trial_id)?;
    let (ds, _) = standardize(&raw, &sp_idx.train)?;
    let ds = ds.with_intercept();
    let train = ds.subset(&sp_idx.train);
    let test = ds.subset(&sp_idx.test);
    if test.sensitive.iter().all(|&v| v == test.sensitive[0]) {
        return Ok(None);
    }
    let batch = generate_linear(cfg.m, train.p(), cfg.sigma, seed)?;
    let preds = predict_linear(&batch, &train.features)?;
    let fair = hard_filter(&preds, &train.sensitive_f64(), cfg.rho)?;
    if fair.is_empty() {
        return Ok(None);
    }
    let h = DMatrix::from_fn(train.p(), fair.k(), |j, t| batch.weights[(fair.indices[t], j)]);
    let model = dfrr_fit(&h, &train.features, &train.labels, cfg.lambda)?;
    let scores = model.predict(&test.features)?;
    let pred = classify(&scores, DEFAULT_THRESHOLD);
    let sp = statistical_parity(&pred, &test.sensitive)?;
    let s1 = test.sensitive.iter().filter(|&&v| v == 1).count() as f64 / test.n() as f64;
    let bound = sp_bound(fair.k(), model.alpha.norm(), cfg.rho, 1.0 - s1, s1)?;
    let cov_fs = cov_fairness(scores.as_slice(), &test.sensitive)?;
    Ok(Some(Theorem4Trial { sp, bound, cov_fs, k: fair.k() }))
}

/// A score distribution that is not quadrant dependent with `s`: zero
/// covariance, yet thresholding at 0.5 separates the groups. Returns
/// `(cov(f,s), SP)` on the constructed sample.
pub fn theorem4_counterexample() -> (f64, f64) {
    // s = 1: nine scores of 1 and one of -9 (mean 0); s = 0: ten scores of 0
    let mut scores = vec![1.0; 9];
    scores.push(-9.0);
    scores.extend(std::iter::repeat_n(0.0, 10));
    let s: Vec<u8> = (0..20).map(|i| (i < 10) as u8).collect();
    let cov = cov_fairness(&scores, &s).expect("both groups present");
    let pred: Vec<u8> = scores.iter().map(|&v| (v >= DEFAULT_THRESHOLD) as u8).collect();
    let sp = statistical_parity(&pred, &s).expect("both groups present");
    (cov, sp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sp_bound_examples() {
        assert_eq!(sp_bound(4, 2.0, 0.0, 0.5, 0.5).unwrap(), 0.0);
        assert!((sp_bound(1, 1.0, 0.01, 0.5, 0.5).unwrap() - 0.04).abs() < 1e-15);
        assert!(sp_bound(1, 1.0, 0.01, 0.0, 1.0).is_err());
        let grid: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
        let best = grid
            .iter()
            .min_by(|a, b| {
                sp_bound(3, 1.0, 0.1, **a, 1.0 - **a).unwrap().total_cmp(&sp_bound(3, 1.0, 0.1, **b, 1.0 - **b).unwrap())
            })
            .unwrap();
        assert!((best - 0.5).abs() < 1e-12);
    }

    #[test]
    fn k_bound_examples() {
        assert_eq!(k_bound_linear(100, 0.0, 0.3, 0.1).unwrap(), 100.0);
        assert_eq!(k_bound_linear(100, 1.0, 0.0, 0.1).unwrap(), 100.0);
        assert!((k_bound_linear(100, 1.0, 0.05, 0.1).unwrap() - 75.0).abs() < 1e-12);
        assert_eq!(k_bound_linear(100, 1.0, 1.0, 0.1).unwrap(), 0.0);
        assert!(k_bound_linear(100, 1.0, 0.05, 0.0).is_err());
    }

    #[test]
    fn distortion_examples() {
        for &(c, k) in &[(0.3, 16usize), (0.5, 64), (0.7, 16)] {
            assert_eq!(distortion_bound(c, k, 0.0).unwrap(), 2.0 * (-(c * c) * k as f64 / 8.0).exp());
        }
        assert_eq!(distortion_bound(0.0, 10, 0.0).unwrap(), 2.0);
        assert!((distortion_bound(0.5, 64, 0.0).unwrap() - 0.2706705664732254).abs() < 1e-15);
        assert!(distortion_bound(1.0, 10, 0.0).is_err());
        // a nonzero mean only loosens the bound
        assert!(distortion_bound(0.5, 64, 0.25).unwrap() > distortion_bound(0.5, 64, 0.0).unwrap());
    }

    #[test]
    fn complexity_term_value() {
        // 2 sqrt((10 ln(100 e) + ln 20) / 1000)
        let want = 2.0 * ((10.0 * (100.0f64.ln() + 1.0) + 20.0f64.ln()) / 1000.0).sqrt();
        assert!((complexity_term(1000, 9, 0.05) - want).abs() < 1e-15);
        assert!((complexity_term(1000, 9, 0.05) - 0.4860).abs() < 1e-4);
    }

    #[test]
    fn generalization_bound_zero_margins() {
        let f = vec![0.0; 50];
        let b = generalization_bound(0.1, 9, 0.05, &f, &f).unwrap();
        let want = 0.1 + complexity_term(50, 9, 0.05) + 8.0 / 0.05;
        assert!((b - want).abs() < 1e-9);
        assert!(generalization_bound(0.1, 9, 0.3, &f, &f).is_err());
    }

    #[test]
    fn generalization_tail_shrinks_with_k() {
        let f: Vec<f64> = (0..40).map(|i| 0.3 + 0.01 * i as f64).collect();
        let h = vec![0.0; 40];
        let tail = |k| generalization_bound(0.0, k, 0.05, &f, &h).unwrap() - complexity_term(40, k, 0.05);
        let vals: Vec<f64> = [8, 16, 32, 64].iter().map(|&k| tail(k)).collect();
        for w in vals.windows(2) {
            assert!(w[1] < w[0], "{vals:?}");
        }
    }

    #[test]
    fn generalization_bound_monotone_in_error_and_delta() {
        let f = vec![0.5; 10];
        let h = vec![0.1; 10];
        let a = generalization_bound(0.1, 8, 0.05, &f, &h).unwrap();
        assert!(generalization_bound(0.2, 8, 0.05, &f, &h).unwrap() >= a);
        assert!(generalization_bound(0.1, 8, 0.01, &f, &h).unwrap() >= a);
        assert_eq!(a, generalization_bound(0.1, 8, 0.05, &f, &h).unwrap());
    }

    #[test]
    fn lemma2_holds_and_rho_zero_forces_zero_cov() {
        let r = validate_lemma2(200, 20, 4, 5, 0.05, 1).unwrap();
        assert!(r.passed, "{}", r.text());
        let z = validate_lemma2(100, 20, 4, 5, 0.0, 2).unwrap();
        assert!(z.passed);
        assert!(z.notes.iter().any(|n| n.starts_with("max |cov(f,s)|")));
    }

    #[test]
    fn lemma3_degenerate_cases() {
        // σ = 0: every hypothesis is the zero function
        let counts = lemma3_counts(3, 40, 100, 3, 0.0, &[0.01], 1.0, 5).unwrap();
        assert!(counts.iter().all(|(k, _)| k[0] == 40.0));
        let big = lemma3_counts(3, 40, 100, 3, 1.0, &[1e6], 1.0, 5).unwrap();
        assert!(big.iter().all(|(k, _)| k[0] == 40.0));
    }

    #[test]
    fn lemma5_extreme_deviation_is_rare() {
        let r = validate_lemma5(2000, 64, &[0.99], 0.0, 8, 3).unwrap();
        assert!(r.points[0].empirical < 0.01);
        assert!(r.passed);
    }

    #[test]
    fn counterexample_breaks_parity_bound() {
        let (cov, sp) = theorem4_counterexample();
        assert!(cov.abs() < 1e-15);
        assert!((sp - 0.9).abs() < 1e-15);
    }

    #[test]
    fn huge_rho_is_never_violated() {
        let cfg = Theorem4Config { trials: 20, rho: 1e3, ..Default::default() };
        let (r, _) = validate_theorem4(&cfg).unwrap();
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn report_serializations() {
        let r = validate_lemma5(200, 16, &[0.3, 0.5], 0.0, 4, 9).unwrap();
        assert_eq!(r.csv().lines().count(), 2 + 2);
        assert!(r.text().contains("lemma5"));
    }
}
