use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its documented domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// The input is well-formed but carries no usable information
    /// (empty background, zero denominator, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("fit failed: {0}")]
    FitFailure(String),
    /// Measured data contradict the forward model beyond tolerance.
    #[error("inconsistent data: {0}")]
    Inconsistent(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    /// True for failures of a numerical procedure rather than of the input
    /// plumbing. The CLI maps these to their own exit code.
    pub fn is_computation(&self) -> bool {
        matches!(
            self,
            Error::FitFailure(_) | Error::Inconsistent(_) | Error::Degenerate(_)
        )
    }
}
