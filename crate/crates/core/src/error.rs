use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid binary value {value} at index {index}")]
    NotBinary { index: usize, value: u8 },

    #[error("chain length must be at least 1, got {0}")]
    InvalidSteps(usize),

    #[error(
        "model too large to enumerate: n_v = {n_v}, n_h = {n_h}, limit = {limit} units on the smaller side"
    )]
    TooLargeToEnumerate {
        n_v: usize,
        n_h: usize,
        limit: usize,
    },

    #[error("intensity {value} at index {index} is outside [0, 1]")]
    InvalidIntensity { index: usize, value: f64 },

    #[error("need at least 2 estimates for a sample variance, got {0}")]
    TooFewEstimates(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {message} (at byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("training diverged at epoch {epoch}: non-finite parameters (learning rate too high?)")]
    Diverged {
        epoch: usize,
        /// Parameters of the last update that stayed finite.
        last_good: Box<crate::trainer::Checkpoint>,
    },

    #[error("report is missing cells: {}", .0.join("; "))]
    MissingCells(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl Into<PathBuf>,
        offset: u64,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }
}
