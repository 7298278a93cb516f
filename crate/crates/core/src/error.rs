use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("value {value} has no dyadic cell at resolution {level}: coordinate out of range")]
    CellOutOfRange { value: f64, level: u32 },

    #[error("invalid cylinder: {0}")]
    InvalidCylinder(String),

    #[error("invalid weight scheme: {0}")]
    InvalidScheme(String),

    #[error("partition level mismatch: ({0}) vs ({1})")]
    LevelMismatch(String, String),

    #[error("distances computed under different schemes: {0} vs {1}")]
    SchemeMismatch(String, String),

    #[error("model capability unavailable: {0}")]
    Capability(String),

    #[error("invalid model parameter `{key}`: {reason}")]
    InvalidModel { key: String, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn model(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidModel {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// Errors caused by user-supplied configuration or input rather than by
    /// a failure while running. The CLI maps these to exit code 2.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidCylinder(_)
                | Error::InvalidScheme(_)
                | Error::InvalidModel { .. }
                | Error::Config(_)
                | Error::Parse { .. }
                | Error::NonFinite { .. }
                | Error::Range(_)
        )
    }
}
