use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// File layout or shape does not match what the reader expected.
    #[error("structural error in {file}: {message}")]
    Structural { file: String, message: String },

    /// A value breaks a data invariant at a specific cell.
    #[error("validation error at (sample {sample}, step {step}, feature {feature}): {message}")]
    Cell {
        sample: usize,
        step: usize,
        feature: usize,
        message: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("nothing to mask: rate is positive but the eligible set is empty")]
    NothingToMask,

    #[error("infeasible placement: {0}")]
    Infeasible(String),

    #[error("no scoreable cells in the evaluation mask")]
    NoScoreableCells,

    #[error("external task failed: {0}")]
    External(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("CSV error in {file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },

    #[error("JSON error in {file}: {source}")]
    Json {
        file: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn structural(file: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Structural {
            file: file.into(),
            message: message.into(),
        }
    }
}
