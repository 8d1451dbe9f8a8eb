use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Requested T60 cannot be reached with a physical absorption coefficient.
    #[error("unreachable target: {0}")]
    UnreachableTarget(String),
    /// Sweep deconvolution found no usable direct-path peak.
    #[error("measurement failed: {0}")]
    MeasurementFailed(String),
    /// Energy decay curve does not span enough dynamic range for a fit.
    #[error("insufficient decay: {0}")]
    InsufficientDecay(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("unbalanced design: {0}")]
    UnbalancedDesign(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
