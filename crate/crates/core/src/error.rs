use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid label {0}; classification labels must be -1 or +1")]
    InvalidLabel(f64),

    #[error("loss {loss} does not match a {task} dataset")]
    TaskMismatch { loss: &'static str, task: &'static str },

    #[error("rate fit needs at least 4 positive points, {0} survived")]
    TooFewPoints(usize),

    #[error("config error in {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("malformed parameter file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
