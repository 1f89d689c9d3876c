//! Multi-trial experiment runs.

use std::fmt::Write as _;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use dfl_core::data::{load_csv, split, standardize, synth_biased, Dataset, Schema, SplitIndices};
use dfl_core::fairfilter::{apply_policy, FairIndexSet, Policy};
use dfl_core::hypothesis::{
    generate_kernel, generate_linear, gram_matrix, predict_kernel, predict_linear, KernelSpec, PredictionMatrix,
};
use dfl_core::learners::{
    baseline_fit, classify, dfgr_fit, dfkrr_fit, dfpca_fit, dfrr_fit, pca_ridge_fit, BaselineKind, FairModel,
    NewtonOptions,
};
use dfl_core::linalg::covariance_matrix;
use dfl_core::metrics::MetricsReport;
use dfl_core::rng::derive_seed;
use dfl_core::{stats, DflError};
use dfl_protocol::{session_id, tp_serve, DcClient, ProtocolError, ThirdParty};

use crate::config::{ExperimentConfig, LearnerKind, TpMode};

pub const CSV_HEADER: &str = "trial,k,SP,ND,err,EP,ED,cov_fs";

/// Seed of trial `trial` under master seed `master`.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    derive_seed(master, trial)
}

/// The split used by trial `trial`; both parties can compute it.
pub fn trial_split(n: usize, train_frac: f64, master: u64, trial: u64) -> Result<SplitIndices> {
    Ok(split(n, train_frac, trial_seed(master, trial), trial)?)
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    if cfg.dataset == "synthetic" {
        return Ok(synth_biased(cfg.synth_n, cfg.synth_p, cfg.synth_bias, cfg.seed)?);
    }
    let preset = cfg.preset.as_deref().ok_or_else(|| anyhow!("a CSV dataset needs a preset"))?;
    let schema = Schema::preset(preset).ok_or_else(|| anyhow!("unknown preset {preset:?}"))?;
    let (ds, _) = load_csv(&cfg.dataset, &schema).with_context(|| format!("loading {}", cfg.dataset))?;
    Ok(ds)
}

/// Sensitive vectors of every trial's training rows, keyed by the session
/// id the data center will use for that trial.
pub fn tp_sessions(s: &[u8], train_frac: f64, master: u64, trials: usize) -> Result<ThirdParty> {
    let mut cohorts = Vec::with_capacity(trials);
    for t in 0..trials as u64 {
        let sp = trial_split(s.len(), train_frac, master, t)?;
        let sub: Vec<u8> = sp.train.iter().map(|&i| s[i]).collect();
        let seed = trial_seed(master, t);
        cohorts.push((session_id(seed), sub, seed));
    }
    Ok(ThirdParty::with_sessions(cohorts.iter().map(|(id, s, seed)| (*id, s.as_slice(), *seed))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub trial: u64,
    pub k: usize,
    pub metrics: MetricsReport,
}

impl TrialRow {
    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.trial, self.k, self.metrics.csv_row())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub trial: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub rows: Vec<TrialRow>,
    pub failures: Vec<TrialFailure>,
}

/// `(mean, sample std)` of each column over successful trials.
pub fn column_summary(rows: &[TrialRow]) -> Vec<(f64, f64)> {
    let cols: [fn(&TrialRow) -> f64; 7] = [
        |r| r.k as f64,
        |r| r.metrics.sp,
        |r| r.metrics.nd,
        |r| r.metrics.classifier_error,
        |r| r.metrics.error_parity,
        |r| r.metrics.error_disparate,
        |r| r.metrics.cov_fs,
    ];
    cols.iter()
        .map(|f| {
            let v: Vec<f64> = rows.iter().map(f).collect();
            (stats::mean(&v), stats::sample_std(&v))
        })
        .collect()
}

impl RunResult {
    pub fn mean_of(&self, f: impl Fn(&TrialRow) -> f64) -> f64 {
        let v: Vec<f64> = self.rows.iter().map(f).collect();
        stats::mean(&v)
    }

    /// Per-trial rows followed by a `mean±std` summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        let cells: Vec<String> = if self.rows.is_empty() {
            vec!["NaN±NaN".into(); 7]
        } else {
            column_summary(&self.rows).iter().map(|(m, s)| format!("{m}±{s}")).collect()
        };
        let _ = writeln!(out, "mean±std,{}", cells.join(","));
        out
    }

    pub fn failures_csv(&self) -> String {
        let mut out = String::from("trial,reason\n");
        for f in &self.failures {
            let _ = writeln!(out, "{},{:?}", f.trial, f.reason);
        }
        out
    }
}

/// Outcome of the filter step of one trial.
enum FilterError {
    Empty { m: usize },
    Fatal(anyhow::Error),
}

impl From<anyhow::Error> for FilterError {
    fn from(e: anyhow::Error) -> Self {
        FilterError::Fatal(e)
    }
}

impl From<DflError> for FilterError {
    fn from(e: DflError) -> Self {
        match e {
            DflError::NoFairHypotheses { m } => FilterError::Empty { m },
            e => FilterError::Fatal(e.into()),
        }
    }
}

fn request_indices(
    cfg: &ExperimentConfig,
    preds: &PredictionMatrix,
    s_train: &[u8],
    seed: u64,
) -> std::result::Result<FairIndexSet, FilterError> {
    let policy = cfg.policy();
    let set = match &cfg.tp_mode {
        TpMode::InProcess => {
            let s: Vec<f64> = s_train.iter().map(|&v| v as f64).collect();
            apply_policy(preds, &s, policy, seed)?
        }
        TpMode::Loopback => {
            let handle = tp_serve(ThirdParty::new(s_train, seed), "127.0.0.1:0").map_err(anyhow::Error::from)?;
            let ex = DcClient::new(handle.local_addr()).and_then(|c| c.exchange(preds, policy, seed));
            handle.shutdown();
            ex.map_err(anyhow::Error::from)?.set
        }
        TpMode::Remote(addr) => {
            let client = DcClient::new(addr.as_str()).map_err(anyhow::Error::from)?;
            match client.exchange(preds, policy, seed) {
                Ok(ex) => ex.set,
                Err(ProtocolError::NoFairHypotheses { m }) => return Err(FilterError::Empty { m }),
                Err(e) => return Err(FilterError::Fatal(e.into())),
            }
        }
    };
    if set.is_empty() {
        return Err(FilterError::Empty { m: set.m });
    }
    Ok(set)
}

/// Columns of a linear batch selected by the index set, as a `p × k` basis.
fn linear_basis(weights: &DMatrix<f64>, set: &FairIndexSet) -> DMatrix<f64> {
    DMatrix::from_fn(weights.ncols(), set.k(), |j, t| weights[(set.indices[t], j)])
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

type FitFn<'a> = dyn Fn(f64, &DMatrix<f64>, &[f64]) -> Result<FairModel> + 'a;

/// Picks `λ` from the grid by validation error on a held-out fifth of the
/// training rows, with the basis fixed.
fn tune_lambda(
    cfg: &ExperimentConfig,
    x: &DMatrix<f64>,
    y: &[f64],
    seed: u64,
    fit: &FitFn<'_>,
) -> Result<f64> {
    if !cfg.tune_lambda {
        return Ok(cfg.lambda);
    }
    let inner = split(y.len(), 0.8, derive_seed(seed, 1), 0)?;
    let (xf, xv) = (select_rows(x, &inner.train), select_rows(x, &inner.test));
    let yf: Vec<f64> = inner.train.iter().map(|&i| y[i]).collect();
    let yv: Vec<f64> = inner.test.iter().map(|&i| y[i]).collect();
    let mut best = (f64::INFINITY, cfg.lambda_grid[0]);
    for &l in &cfg.lambda_grid {
        let model = fit(l, &xf, &yf)?;
        let pred = classify(&model.predict(&xv)?, cfg.threshold);
        let err = dfl_core::metrics::classifier_error(&pred, &yv)?;
        if err < best.0 {
            best = (err, l);
        }
    }
    Ok(best.1)
}

/// Fits the configured learner on `train` and scores `test`.
fn fit_and_score(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
) -> std::result::Result<(usize, DVector<f64>), FilterError> {
    let y = &train.labels;
    match cfg.learner {
        LearnerKind::Dfrr | LearnerKind::Dfgr => {
            let (tr, te) = (train.with_intercept(), test.with_intercept());
            let batch = generate_linear(cfg.m, tr.p(), cfg.sigma, seed)?;
            let preds = predict_linear(&batch, &tr.features)?;
            let set = request_indices(cfg, &preds, &train.sensitive, seed)?;
            let h = linear_basis(&batch.weights, &set);
            let fit = |l: f64, x: &DMatrix<f64>, y: &[f64]| -> Result<FairModel> {
                Ok(match cfg.learner {
                    LearnerKind::Dfrr => dfrr_fit(&h, x, y, l)?,
                    _ => dfgr_fit(&h, x, y, l, NewtonOptions::default())?,
                })
            };
            let lambda = tune_lambda(cfg, &tr.features, y, seed, &fit)?;
            Ok((set.k(), fit(lambda, &tr.features, y)?.predict(&te.features)?))
        }
        LearnerKind::Dfpca => {
            let batch = generate_linear(cfg.m, train.p(), cfg.sigma, seed)?;
            let preds = predict_linear(&batch, &train.features)?;
            let set = request_indices(cfg, &preds, &train.sensitive, seed)?;
            let h = linear_basis(&batch.weights, &set);
            let sub = dfpca_fit(&h, &covariance_matrix(&train.features), cfg.q.min(set.k()))?;
            let fit = |l: f64, x: &DMatrix<f64>, y: &[f64]| -> Result<FairModel> { Ok(pca_ridge_fit(&sub, x, y, l, true)?) };
            let lambda = tune_lambda(cfg, &train.features, y, seed, &fit)?;
            Ok((set.k(), fit(lambda, &train.features, y)?.predict(&test.features)?))
        }
        LearnerKind::Dfkrr => {
            let kernel = match (cfg.kernel.as_str(), cfg.kernel_gamma) {
                ("linear", _) => KernelSpec::Linear,
                (_, Some(gamma)) => KernelSpec::Rbf { gamma },
                _ => KernelSpec::rbf_median_heuristic(&train.features),
            };
            let gram = gram_matrix(&train.features, kernel)?;
            let batch = generate_kernel(cfg.m, train.n(), cfg.sigma, seed, kernel)?;
            let preds = predict_kernel(&batch, &gram)?;
            let set = request_indices(cfg, &preds, &train.sensitive, seed)?;
            let coeffs = linear_basis(&batch.coeffs, &set);
            let model = dfkrr_fit(&gram, &coeffs, y, cfg.lambda, &train.features, kernel)?;
            Ok((set.k(), model.predict(&test.features)?))
        }
        LearnerKind::Ridge | LearnerKind::Logistic => {
            let (tr, te) = (train.with_intercept(), test.with_intercept());
            let kind = match cfg.learner {
                LearnerKind::Ridge => BaselineKind::Ridge,
                _ => BaselineKind::Logistic(NewtonOptions::default()),
            };
            let fit = |l: f64, x: &DMatrix<f64>, y: &[f64]| -> Result<FairModel> { Ok(baseline_fit(kind, x, y, l)?) };
            let lambda = tune_lambda(cfg, &tr.features, y, seed, &fit)?;
            Ok((tr.p(), fit(lambda, &tr.features, y)?.predict(&te.features)?))
        }
        LearnerKind::Pca => {
            let kind = BaselineKind::PcaRidge { q: cfg.q.min(train.p()), intercept: true };
            let fit = |l: f64, x: &DMatrix<f64>, y: &[f64]| -> Result<FairModel> { Ok(baseline_fit(kind, x, y, l)?) };
            let lambda = tune_lambda(cfg, &train.features, y, seed, &fit)?;
            Ok((train.p(), fit(lambda, &train.features, y)?.predict(&test.features)?))
        }
    }
}

/// One trial, standardized with training-row statistics and scored on the
/// held-out rows. `Ok(Err(_))` is a recorded failure (no fair hypotheses).
pub fn run_trial(cfg: &ExperimentConfig, ds: &Dataset, trial: u64) -> Result<std::result::Result<TrialRow, TrialFailure>> {
    let seed = trial_seed(cfg.seed, trial);
    let sp = trial_split(ds.n(), cfg.train_frac, cfg.seed, trial)?;
    let (std_ds, _) = standardize(ds, &sp.train)?;
    let train = std_ds.subset(&sp.train);
    let test = std_ds.subset(&sp.test);
    let (k, scores) = match fit_and_score(cfg, &train, &test, seed) {
        Ok(v) => v,
        Err(FilterError::Empty { m }) => {
            return Ok(Err(TrialFailure { trial, reason: format!("no fair hypotheses among m = {m}") }));
        }
        Err(FilterError::Fatal(e)) => return Err(e.context(format!("trial {trial}"))),
    };
    let pred = classify(&scores, cfg.threshold);
    let metrics = MetricsReport::evaluate(&pred, &test.labels, &test.sensitive, scores.as_slice())
        .with_context(|| format!("trial {trial}"))?;
    Ok(Ok(TrialRow { trial, k, metrics }))
}

/// All trials in parallel; output ordered by trial id.
pub fn run_on(cfg: &ExperimentConfig, ds: &Dataset) -> Result<RunResult> {
    let outcomes: Vec<Result<std::result::Result<TrialRow, TrialFailure>>> =
        (0..cfg.trials as u64).into_par_iter().map(|t| run_trial(cfg, ds, t)).collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o? {
            Ok(r) => rows.push(r),
            Err(f) => failures.push(f),
        }
    }
    Ok(RunResult { rows, failures })
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    run_on(cfg, &load_dataset(cfg)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub rho: f64,
    pub mean_sp: f64,
    pub mean_error: f64,
    /// Over all trials, failed ones counting as `k = 0`.
    pub mean_k: f64,
    pub trials_ok: usize,
    pub trials_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rho,mean_SP,mean_err,mean_k,trials_ok,trials_failed\n");
        for p in &self.points {
            let _ =
                writeln!(out, "{},{},{},{},{},{}", p.rho, p.mean_sp, p.mean_error, p.mean_k, p.trials_ok, p.trials_failed);
        }
        out
    }

    /// Spearman correlations of `ρ` with mean SP and with mean error.
    pub fn trend(&self) -> (f64, f64) {
        let rho: Vec<f64> = self.points.iter().map(|p| p.rho).collect();
        let sp: Vec<f64> = self.points.iter().map(|p| p.mean_sp).collect();
        let err: Vec<f64> = self.points.iter().map(|p| p.mean_error).collect();
        (stats::spearman(&rho, &sp), stats::spearman(&rho, &err))
    }
}

/// One run per grid point; every point reuses the same trial seeds.
pub fn sweep_rho(cfg: &ExperimentConfig, grid: &[f64]) -> Result<SweepResult> {
    if grid.is_empty() {
        bail!("empty rho grid");
    }
    if cfg.soft {
        bail!("sweep-rho applies to the hard threshold policy");
    }
    let ds = load_dataset(cfg)?;
    let mut points = Vec::with_capacity(grid.len());
    for &rho in grid {
        let c = ExperimentConfig { rho, ..cfg.clone() };
        c.validate()?;
        let r = run_on(&c, &ds)?;
        points.push(SweepPoint {
            rho,
            mean_sp: r.mean_of(|t| t.metrics.sp),
            mean_error: r.mean_of(|t| t.metrics.classifier_error),
            mean_k: r.rows.iter().map(|t| t.k as f64).sum::<f64>() / c.trials as f64,
            trials_ok: r.rows.len(),
            trials_failed: r.failures.len(),
        });
    }
    Ok(SweepResult { points })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovSignResult {
    /// `(trial, cov(f(x), s))` for successful trials.
    pub covs: Vec<(u64, f64)>,
    pub failures: Vec<TrialFailure>,
}

impl CovSignResult {
    pub fn fraction_positive(&self) -> f64 {
        if self.covs.is_empty() {
            return 0.0;
        }
        self.covs.iter().filter(|(_, c)| *c > 0.0).count() as f64 / self.covs.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,cov_fs\n");
        for (t, c) in &self.covs {
            let _ = writeln!(out, "{t},{c}");
        }
        out
    }
}

pub fn cov_sign_diagnostic(cfg: &ExperimentConfig) -> Result<CovSignResult> {
    let r = run(cfg)?;
    Ok(CovSignResult { covs: r.rows.iter().map(|t| (t.trial, t.metrics.cov_fs)).collect(), failures: r.failures })
}

/// Soft policy needs nothing beyond `Policy`; exposed for callers that
/// build requests by hand.
pub fn policy_of(cfg: &ExperimentConfig) -> Policy {
    cfg.policy()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigOverrides;

    fn small() -> ExperimentConfig {
        ConfigOverrides {
            synth_n: Some(300),
            m: Some(200),
            trials: Some(4),
            rho: Some(0.05),
            ..Default::default()
        }
        .resolve()
        .unwrap()
    }

    #[test]
    fn summary_row_is_recomputable() {
        let r = run(&small()).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 2 + r.rows.len());
        let sp: Vec<f64> = lines[1..lines.len() - 1].iter().map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
        let summary = lines.last().unwrap().split(',').nth(2).unwrap();
        let (m, s) = summary.split_once('±').unwrap();
        assert!((m.parse::<f64>().unwrap() - stats::mean(&sp)).abs() <= 1e-12);
        assert!((s.parse::<f64>().unwrap() - stats::sample_std(&sp)).abs() <= 1e-12);
    }

    #[test]
    fn empty_fair_sets_are_recorded_failures() {
        let cfg = ExperimentConfig { rho: 0.0, ..small() };
        let r = run(&cfg).unwrap();
        assert!(r.rows.is_empty());
        assert_eq!(r.failures.len(), 4);
        assert!(r.to_csv().lines().last().unwrap().starts_with("mean±std,NaN"));
    }

    #[test]
    fn every_learner_runs() {
        for learner in ["dfrr", "dfkrr", "dfgr", "dfpca", "ridge", "logistic", "pca"] {
            let cfg = ConfigOverrides { learner: Some(learner.into()), q: Some(3), ..Default::default() }
                .over(ConfigOverrides { synth_n: Some(120), m: Some(100), trials: Some(2), rho: Some(0.2), ..Default::default() })
                .resolve()
                .unwrap();
            let r = run(&cfg).unwrap();
            assert_eq!(r.rows.len() + r.failures.len(), 2, "{learner}");
        }
    }

    #[test]
    fn tuned_lambda_comes_from_the_grid() {
        let cfg = ExperimentConfig { tune_lambda: true, ..small() };
        assert_eq!(run(&cfg).unwrap().rows.len(), 4);
    }
}
