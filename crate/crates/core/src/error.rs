use thiserror::Error;

/// Errors raised by the tracking library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("two-body singularity: position norm {radius_km} km is below 1 km")]
    Singularity { radius_km: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid configuration `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("inconsistent association event: {0}")]
    InvalidEvent(String),

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("degenerate weight update: every child has zero posterior mass")]
    DegenerateUpdate,

    #[error("enumeration limit exceeded: {0}")]
    LimitExceeded(String),

    #[error("position coincides with the sensor origin")]
    AtSensorOrigin,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.to_string(),
        reason: reason.into(),
    }
}
