use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the model.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested statistic is undefined for the given data (zero mean, empty histogram).
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    /// A fit cannot be performed on the supplied data.
    #[error("ill-conditioned fit: {0}")]
    IllConditioned(String),

    /// A calibration quantity cannot be estimated from the histogram.
    #[error("cannot estimate: {0}")]
    CannotEstimate(String),

    /// A file does not follow the expected schema.
    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn undefined(msg: impl Into<String>) -> Self {
        Error::UndefinedStatistic(msg.into())
    }
}
