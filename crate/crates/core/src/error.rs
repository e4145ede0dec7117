use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("attribute component {value} outside the rating scale [0, {max}]")]
    OutOfScale { value: f64, max: f64 },

    #[error("invalid configuration for `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for errors in the configuration rather than while running.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Parse { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
