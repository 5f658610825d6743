use thiserror::Error;

/// Errors produced by the estimation, clustering and data-handling routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// The covariance could not be factorized. `min_pivot` is the smallest
    /// diagonal entry seen before the factorization gave up.
    #[error("covariance is not numerically positive definite (smallest pivot {min_pivot:e})")]
    NotPositiveDefinite { min_pivot: f64 },

    /// HSIC between the cause and the latent parameters vanished, so its log is undefined.
    #[error("latent parameters are degenerate (HSIC = {hsic:e}); reinitialize")]
    DegenerateLatent { hsic: f64 },

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("variable is constant (zero variance)")]
    ConstantVariable,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
