use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time {t} is outside of [0, {horizon}]")]
    OutOfDomain { t: f64, horizon: f64 },

    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    /// Newton failed inside a time-stepping loop.
    #[error("Newton did not converge at step {step}: residual {residual:.3e} after {iterations} iterations")]
    StepFailure {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    /// Newton failed on a global (all-at-once) system.
    #[error("nonlinear solve did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("failed to parse configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
