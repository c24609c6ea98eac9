//! Error type shared across the crate.

use nalgebra::DMatrix;

/// Errors produced by model construction, estimation and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (max |A - A^T| entry = {max_dev:.3e})")]
    NotSymmetric { max_dev: f64 },

    #[error("{context}: matrix is not positive definite")]
    NotPositiveDefinite { context: String },

    #[error("non-finite emission log-density for state {state} at observation {t}")]
    NonFiniteEmission { state: usize, t: usize },

    #[error("state {state}: weighted empirical covariance is singular or ill-conditioned")]
    SingularCovariance { state: usize },

    #[error("state {state} has (numerically) zero effective sample size")]
    ZeroStateMass { state: usize },

    #[error("graphical lasso did not reach tolerance within {iterations} sweeps")]
    GlassoNoConvergence {
        iterations: usize,
        /// Last iterate, returned so callers can inspect or salvage it.
        last: Box<DMatrix<f64>>,
    },

    #[error("non-finite log-likelihood at EM iteration {iteration}")]
    NonFiniteLikelihood { iteration: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
