//! Experiment harness for distributed fair learning.

pub mod config;
pub mod harness;
pub mod manifest;
pub mod suite;

pub use config::{ConfigOverrides, ExperimentConfig, LearnerKind, TpMode};
pub use harness::{cov_sign_diagnostic, run, run_on, sweep_rho, RunResult, SweepResult};
