//! Experiment configuration: a flat TOML file whose keys can each be
//! overridden by a command-line flag of the same name.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use dfl_core::fairfilter::Policy;
use dfl_core::hypothesis::DEFAULT_M;

pub const DEFAULT_LAMBDA_GRID: [f64; 3] = [0.01, 0.1, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Dfrr,
    Dfkrr,
    Dfgr,
    Dfpca,
    Ridge,
    Logistic,
    Pca,
}

impl LearnerKind {
    pub fn is_fair(self) -> bool {
        matches!(self, LearnerKind::Dfrr | LearnerKind::Dfkrr | LearnerKind::Dfgr | LearnerKind::Dfpca)
    }
}

impl FromStr for LearnerKind {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dfrr" => LearnerKind::Dfrr,
            "dfkrr" => LearnerKind::Dfkrr,
            "dfgr" => LearnerKind::Dfgr,
            "dfpca" => LearnerKind::Dfpca,
            "ridge" => LearnerKind::Ridge,
            "logistic" => LearnerKind::Logistic,
            "pca" => LearnerKind::Pca,
            other => bail!("unknown learner {other:?} (dfrr, dfkrr, dfgr, dfpca, ridge, logistic, pca)"),
        })
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LearnerKind::Dfrr => "dfrr",
            LearnerKind::Dfkrr => "dfkrr",
            LearnerKind::Dfgr => "dfgr",
            LearnerKind::Dfpca => "dfpca",
            LearnerKind::Ridge => "ridge",
            LearnerKind::Logistic => "logistic",
            LearnerKind::Pca => "pca",
        };
        f.write_str(s)
    }
}

/// Where the third party's filter runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TpMode {
    /// Direct call into the filter.
    InProcess,
    /// A service on an ephemeral loopback port per trial.
    Loopback,
    /// An external `serve-tp` process.
    Remote(String),
}

impl fmt::Display for TpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TpMode::InProcess => f.write_str("in-process"),
            TpMode::Loopback => f.write_str("loopback"),
            TpMode::Remote(a) => write!(f, "remote({a})"),
        }
    }
}

/// Every key is optional; used both for the config file and for flags.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize, Args)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    /// `synthetic` or a CSV path.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Schema preset for CSV data: community-crime, compas, credit.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub synth_n: Option<usize>,
    #[arg(long)]
    pub synth_p: Option<usize>,
    #[arg(long)]
    pub synth_bias: Option<f64>,
    #[arg(long)]
    pub learner: Option<String>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub soft: Option<bool>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Pick lambda per trial from `lambda_grid` on a validation split.
    #[arg(long)]
    pub tune_lambda: Option<bool>,
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub q: Option<usize>,
    /// `rbf` or `linear`.
    #[arg(long)]
    pub kernel: Option<String>,
    /// RBF width; the median pairwise distance when unset.
    #[arg(long)]
    pub kernel_gamma: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// `in-process`, `loopback` or `remote`.
    #[arg(long)]
    pub tp_mode: Option<String>,
    #[arg(long, env = "DFL_TP_ADDR")]
    pub tp_addr: Option<String>,
}

macro_rules! merge_fields {
    ($hi:expr, $lo:expr, $($f:ident),*) => {
        ConfigOverrides { $($f: $hi.$f.or($lo.$f),)* }
    };
}

impl ConfigOverrides {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("parsing config file")
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .with_context(|| format!("reading {}", path.as_ref().display()))?;
        Self::from_toml(&text)
    }

    /// Keys set in `self` win over `lower`.
    pub fn over(self, lower: ConfigOverrides) -> ConfigOverrides {
        merge_fields!(
            self, lower, dataset, preset, synth_n, synth_p, synth_bias, learner, m, sigma, rho, soft, sigma2, lambda,
            tune_lambda, lambda_grid, q, kernel, kernel_gamma, trials, train_frac, seed, threshold, tp_mode, tp_addr
        )
    }

    pub fn resolve(self) -> Result<ExperimentConfig> {
        let d = ExperimentConfig::default();
        let tp_mode = match (self.tp_mode.as_deref(), self.tp_addr) {
            (None | Some("in-process"), None) => TpMode::InProcess,
            (Some("loopback"), _) => TpMode::Loopback,
            (None | Some("remote"), Some(addr)) => TpMode::Remote(addr),
            (Some("in-process"), Some(_)) => TpMode::InProcess,
            (Some("remote"), None) => bail!("tp_mode = remote needs tp_addr or DFL_TP_ADDR"),
            (Some(other), _) => bail!("unknown tp_mode {other:?}"),
        };
        let cfg = ExperimentConfig {
            dataset: self.dataset.unwrap_or(d.dataset),
            preset: self.preset.or(d.preset),
            synth_n: self.synth_n.unwrap_or(d.synth_n),
            synth_p: self.synth_p.unwrap_or(d.synth_p),
            synth_bias: self.synth_bias.unwrap_or(d.synth_bias),
            learner: match self.learner {
                Some(l) => l.parse()?,
                None => d.learner,
            },
            m: self.m.unwrap_or(d.m),
            sigma: self.sigma.unwrap_or(d.sigma),
            rho: self.rho.unwrap_or(d.rho),
            soft: self.soft.unwrap_or(d.soft),
            sigma2: self.sigma2.unwrap_or(d.sigma2),
            lambda: self.lambda.unwrap_or(d.lambda),
            tune_lambda: self.tune_lambda.unwrap_or(d.tune_lambda),
            lambda_grid: self.lambda_grid.unwrap_or(d.lambda_grid),
            q: self.q.unwrap_or(d.q),
            kernel: self.kernel.unwrap_or(d.kernel),
            kernel_gamma: self.kernel_gamma.or(d.kernel_gamma),
            trials: self.trials.unwrap_or(d.trials),
            train_frac: self.train_frac.unwrap_or(d.train_frac),
            seed: self.seed.unwrap_or(d.seed),
            threshold: self.threshold.unwrap_or(d.threshold),
            tp_mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Fully resolved settings of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub preset: Option<String>,
    pub synth_n: usize,
    pub synth_p: usize,
    pub synth_bias: f64,
    pub learner: LearnerKind,
    pub m: usize,
    pub sigma: f64,
    pub rho: f64,
    pub soft: bool,
    pub sigma2: f64,
    pub lambda: f64,
    pub tune_lambda: bool,
    pub lambda_grid: Vec<f64>,
    pub q: usize,
    pub kernel: String,
    pub kernel_gamma: Option<f64>,
    pub trials: usize,
    pub train_frac: f64,
    pub seed: u64,
    pub threshold: f64,
    pub tp_mode: TpMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "synthetic".into(),
            preset: None,
            synth_n: 2000,
            synth_p: 5,
            synth_bias: 1.0,
            learner: LearnerKind::Dfrr,
            m: DEFAULT_M,
            sigma: 1.0,
            rho: 0.01,
            soft: false,
            sigma2: 1.0,
            lambda: 0.1,
            tune_lambda: false,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            q: 10,
            kernel: "rbf".into(),
            kernel_gamma: None,
            trials: 50,
            train_frac: 0.75,
            seed: 0,
            threshold: 0.5,
            tp_mode: TpMode::InProcess,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            bail!("trials must be >= 1");
        }
        if self.m == 0 {
            bail!("m must be >= 1");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            bail!("sigma must be > 0");
        }
        if !(self.rho >= 0.0) {
            bail!("rho must be >= 0");
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            bail!("sigma2 must be > 0");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            bail!("lambda must be >= 0");
        }
        if self.tune_lambda && (self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0))) {
            bail!("lambda_grid must be a nonempty list of values >= 0");
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            bail!("train_frac must be in (0, 1)");
        }
        if self.q == 0 {
            bail!("q must be >= 1");
        }
        if !matches!(self.kernel.as_str(), "rbf" | "linear") {
            bail!("kernel must be rbf or linear");
        }
        if self.kernel_gamma.is_some_and(|g| !(g > 0.0)) {
            bail!("kernel_gamma must be > 0");
        }
        if !(0.0..=1.0).contains(&self.synth_bias) || self.synth_n < 10 || self.synth_p == 0 {
            bail!("synthetic data needs synth_n >= 10, synth_p >= 1 and synth_bias in [0, 1]");
        }
        if self.dataset != "synthetic" && self.preset.is_none() {
            bail!("a CSV dataset needs a schema preset");
        }
        Ok(())
    }

    pub fn policy(&self) -> Policy {
        if self.soft {
            Policy::Soft { sigma2: self.sigma2 }
        } else {
            Policy::Hard { rho: self.rho }
        }
    }

    /// Resolved configuration as flat TOML.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        put("dataset", format!("{:?}", self.dataset));
        if let Some(p) = &self.preset {
            put("preset", format!("{p:?}"));
        }
        put("synth_n", self.synth_n.to_string());
        put("synth_p", self.synth_p.to_string());
        put("synth_bias", format!("{:?}", self.synth_bias));
        put("learner", format!("\"{}\"", self.learner));
        put("m", self.m.to_string());
        put("sigma", format!("{:?}", self.sigma));
        put("rho", if self.rho.is_infinite() { "inf".into() } else { format!("{:?}", self.rho) });
        put("soft", self.soft.to_string());
        put("sigma2", format!("{:?}", self.sigma2));
        put("lambda", format!("{:?}", self.lambda));
        put("tune_lambda", self.tune_lambda.to_string());
        put("lambda_grid", format!("{:?}", self.lambda_grid));
        put("q", self.q.to_string());
        put("kernel", format!("{:?}", self.kernel));
        if let Some(g) = self.kernel_gamma {
            put("kernel_gamma", format!("{g:?}"));
        }
        put("trials", self.trials.to_string());
        put("train_frac", format!("{:?}", self.train_frac));
        put("seed", self.seed.to_string());
        put("threshold", format!("{:?}", self.threshold));
        match &self.tp_mode {
            TpMode::Remote(a) => {
                put("tp_mode", "\"remote\"".into());
                put("tp_addr", format!("{a:?}"));
            }
            m => put("tp_mode", format!("\"{m}\"")),
        }
        out
    }
}
