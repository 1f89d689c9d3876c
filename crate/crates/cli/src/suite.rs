//! Theory validators with the default settings used by `validate-theory`.

use std::str::FromStr;

use anyhow::{bail, Result};
use dfl_core::theory::{
    lemma3_counts, validate_lemma2, validate_lemma3, validate_lemma5, validate_theorem4, BoundPoint, BoundReport,
    Theorem4Config, SE_MULTIPLIER, THEOREM4_MAX_VIOLATION_RATE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Lemma2,
    Lemma3,
    Lemma5,
    Theorem4,
    All,
}

impl FromStr for Which {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lemma2" => Which::Lemma2,
            "lemma3" => Which::Lemma3,
            "lemma5" => Which::Lemma5,
            "theorem4" => Which::Theorem4,
            "all" => Which::All,
            _ => bail!("unknown validator {s:?} (lemma2, lemma3, lemma5, theorem4, all)"),
        })
    }
}

/// Acceptance thresholds applied on top of the validators' raw numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub se_multiplier: f64,
    pub max_violation_rate: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { se_multiplier: SE_MULTIPLIER, max_violation_rate: THEOREM4_MAX_VIOLATION_RATE }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        if !(self.se_multiplier >= 0.0 && self.se_multiplier.is_finite()) {
            bail!("se multiplier must be finite and >= 0, got {}", self.se_multiplier);
        }
        if !(0.0..=1.0).contains(&self.max_violation_rate) {
            bail!("max violation rate must lie in [0, 1], got {}", self.max_violation_rate);
        }
        Ok(())
    }
}

/// Monte Carlo sizes. Defaults match the acceptance settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteParams {
    pub seed: u64,
    pub lemma2_trials: usize,
    pub lemma3_trials: usize,
    /// `(σ, ρ)` settings of the expected-count bound.
    pub lemma3_settings: Vec<(f64, f64)>,
    /// `ρ` grid of the monotonicity check.
    pub lemma3_rho_grid: Vec<f64>,
    pub lemma5_trials: usize,
    pub theorem4: Theorem4Config,
}

impl Default for SuiteParams {
    fn default() -> Self {
        Self {
            seed: 7,
            lemma2_trials: 1000,
            lemma3_trials: 200,
            lemma3_settings: vec![(1.0, 0.5), (1.0, 1.0), (0.5, 0.3)],
            lemma3_rho_grid: vec![0.05, 0.1, 0.2, 0.3, 0.5, 1.0],
            lemma5_trials: 10_000,
            theorem4: Theorem4Config::default(),
        }
    }
}

pub const LEMMA3_M: usize = 500;
pub const LEMMA3_N: usize = 500;
pub const LEMMA3_P: usize = 5;
pub const LEMMA3_BIAS: f64 = 1.0;

/// Re-evaluates pass/fail under `tol`. Lemma 3 points need the empirical
/// mean above the bound, Lemma 5 points need the tail below it.
pub fn rejudge(report: &mut BoundReport, tol: &Tolerances) {
    match report.name.as_str() {
        "lemma3" | "lemma5" => {
            let lower = report.name == "lemma3";
            for p in &mut report.points {
                p.passed = if lower {
                    p.empirical >= p.bound - tol.se_multiplier * p.std_error
                } else {
                    p.empirical <= p.bound + tol.se_multiplier * p.std_error
                };
            }
            report.violations = report.points.iter().filter(|p| !p.passed).count();
            report.violation_rate = report.violations as f64 / report.points.len().max(1) as f64;
            report.passed = report.violations == 0;
        }
        "theorem4" => {
            report.passed = report.trials > 0 && report.violation_rate <= tol.max_violation_rate;
        }
        _ => {}
    }
}

fn lemma3_monotone(p: &SuiteParams) -> Result<BoundReport> {
    let counts = lemma3_counts(p.lemma3_trials, LEMMA3_M, LEMMA3_N, LEMMA3_P, 1.0, &p.lemma3_rho_grid, LEMMA3_BIAS, p.seed)?;
    let means: Vec<f64> = (0..p.lemma3_rho_grid.len())
        .map(|j| counts.iter().map(|(k, _)| k[j]).sum::<f64>() / counts.len() as f64)
        .collect();
    let mut report = BoundReport {
        name: "lemma3_monotone".into(),
        bound_value: f64::NAN,
        empirical_value: f64::NAN,
        trials: p.lemma3_trials,
        violations: 0,
        violation_rate: 0.0,
        parameters: [("m", LEMMA3_M as f64), ("n", LEMMA3_N as f64), ("p", LEMMA3_P as f64), ("bias", LEMMA3_BIAS)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        points: Vec::new(),
        notes: Vec::new(),
        probability: false,
        passed: false,
    };
    for (j, (&rho, &mk)) in p.lemma3_rho_grid.iter().zip(&means).enumerate() {
        let ok = j == 0 || mk >= means[j - 1];
        report.points.push(BoundPoint {
            label: format!("rho={rho}"),
            bound: if j == 0 { 0.0 } else { means[j - 1] },
            empirical: mk,
            std_error: 0.0,
            passed: ok,
        });
    }
    report.violations = report.points.iter().filter(|q| !q.passed).count();
    report.violation_rate = report.violations as f64 / report.points.len() as f64;
    report.bound_value = means[0];
    report.empirical_value = *means.last().unwrap_or(&f64::NAN);
    report.notes.push("mean k must be nondecreasing along the grid".into());
    report.passed = report.violations == 0;
    Ok(report)
}

/// Runs the selected validators and applies `tol`.
pub fn run_suite(which: Which, p: &SuiteParams, tol: &Tolerances) -> Result<Vec<BoundReport>> {
    tol.validate()?;
    let mut out = Vec::new();
    if matches!(which, Which::Lemma2 | Which::All) {
        out.push(validate_lemma2(p.lemma2_trials, 50, 8, 6, 0.05, p.seed)?);
    }
    if matches!(which, Which::Lemma3 | Which::All) {
        for &(sigma, rho) in &p.lemma3_settings {
            out.push(validate_lemma3(p.lemma3_trials, LEMMA3_M, LEMMA3_N, LEMMA3_P, sigma, rho, LEMMA3_BIAS, p.seed)?);
        }
        out.push(lemma3_monotone(p)?);
    }
    if matches!(which, Which::Lemma5 | Which::All) {
        for k in [16, 64] {
            for scale in [0.0, 0.25] {
                out.push(validate_lemma5(p.lemma5_trials, k, &[0.3, 0.5, 0.7], scale, 32, p.seed)?);
            }
        }
    }
    if matches!(which, Which::Theorem4 | Which::All) {
        out.push(validate_theorem4(&p.theorem4)?.0);
    }
    for r in &mut out {
        rejudge(r, tol);
    }
    Ok(out)
}
