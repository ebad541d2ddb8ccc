use thiserror::Error;

/// Errors raised by the solvers and experiment drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver failure at nu={nu:e}, k={k}, lambda={lambda}: {reason}")]
    SolverFailure {
        nu: f64,
        k: i64,
        lambda: f64,
        reason: String,
    },

    #[error("numerical blow-up at t={time} (k={k:?})")]
    BlowUp { time: f64, k: Option<i64> },

    #[error("fit unavailable: {0}")]
    FitUnavailable(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
