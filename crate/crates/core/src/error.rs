use thiserror::Error;

/// Errors raised by the core learning pipeline.
#[derive(Debug, Error)]
pub enum DflError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular system (rank {rank} of {dim})")]
    Singular { rank: usize, dim: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("newton iteration diverged after {iterations} iterations")]
    Diverged { iterations: usize, last: Vec<f64> },

    #[error("empty group: no samples with s = {0}")]
    EmptyGroup(u8),

    #[error("no fair hypotheses returned (m = {m})")]
    NoFairHypotheses { m: usize },

    #[error("container format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DflError>;
