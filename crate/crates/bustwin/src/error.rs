//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration field failed validation. `field` is the dotted path
    /// into the config file, e.g. `calibration.elite_ratio`.
    #[error("{field}: {reason}")]
    InvalidConfig { field: String, reason: String },

    /// Two chained artifacts disagree (dataset vs. calibration vs. filter run).
    #[error("fingerprint mismatch: expected {expected}, found {found} ({context})")]
    FingerprintMismatch {
        expected: String,
        found: String,
        context: String,
    },

    /// Model geometry and dataset geometry do not line up.
    #[error("dataset mismatch: {0}")]
    DatasetMismatch(String),

    /// Observation timestamps must be strictly increasing during assimilation.
    #[error("observation timestamp regression: {previous} -> {current}")]
    TimestampRegression { previous: f64, current: f64 },

    /// The optimizer could not produce a finite objective value.
    #[error("optimization infeasible: {0}")]
    Infeasible(String),

    #[error("malformed record: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn invalid_config(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
