use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Every importance weight in a normalization was zero.
    #[error("importance weights degenerate: {0}")]
    WeightDegeneracy(String),

    #[error("projection Gram matrix is singular")]
    SingularProjection,

    #[error("Newton-Kantorovich Jacobian is singular at iteration {iteration}")]
    SingularJacobian { iteration: usize },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("successive approximation diverged at iteration {iteration} (residual {residual:e})")]
    Diverged { iteration: usize, residual: f64 },

    #[error("Newton-Kantorovich requires a smoothing parameter > 0")]
    UnsupportedNonSmooth,

    #[error("system of size {n} exceeds the dense-solve cap of {cap}")]
    MemoryGuard { n: usize, cap: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{failed} of {total} replications failed")]
    ReplicationFailures { failed: usize, total: usize },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }
}
