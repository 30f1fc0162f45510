use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("density left the admissible range: {0}")]
    OutOfRange(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("monotonicity violated: {0}")]
    Monotonicity(String),

    #[error("insufficient resolution: {0}")]
    Resolution(String),

    #[error("boundary mismatch: {0}")]
    BoundaryMismatch(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors raised by a numerical procedure (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::OutOfRange(_)
                | Error::NoConvergence(_)
                | Error::Monotonicity(_)
                | Error::Resolution(_)
                | Error::InsufficientSamples(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
