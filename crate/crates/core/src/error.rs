use thiserror::Error;

/// Errors produced by the engine.
///
/// `InvalidArgument` means the caller handed us something malformed (empty
/// input, non-positive hyperparameter, mismatched lengths). `Factorization`
/// means a covariance matrix could not be factored even after the jitter
/// ladder was exhausted, which indicates a numerically hopeless state rather
/// than a caller mistake.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("Cholesky factorization failed; attempted jitter levels {attempted:?}")]
    Factorization { attempted: Vec<f64> },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad caller input rather than numerical
    /// breakdown. The CLI maps these to different exit codes.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. }
        )
    }
}
