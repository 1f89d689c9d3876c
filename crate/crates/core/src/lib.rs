//! Distributed fair learning: a data collector fits models inside a span of
//! random hypotheses that a third party holding the sensitive attribute has
//! certified as approximately uncorrelated with it.

pub mod container;
pub mod data;
pub mod error;
pub mod fairfilter;
pub mod hypothesis;
pub mod learners;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod stats;
pub mod theory;

pub use data::Dataset;
pub use error::{DflError, Result};
pub use fairfilter::{FairIndexSet, Policy};
pub use hypothesis::{KernelSpec, LinearHypothesisBatch, PredictionMatrix};
pub use learners::{FairModel, ModelKind};
pub use metrics::MetricsReport;
