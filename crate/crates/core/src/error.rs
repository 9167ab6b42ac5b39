use nalgebra::DVector;
use thiserror::Error;

use crate::solvers::TrajectoryRecord;

pub type Result<T> = std::result::Result<T, Error>;

/// Snapshot carried by a divergence error.
#[derive(Debug, Clone)]
pub struct Divergence {
    /// Step index at which the non-finite or exploding quantity appeared.
    pub step: usize,
    pub reason: String,
    /// Last iterate whose losses and gradients were all finite and bounded.
    pub last_logits: DVector<f64>,
    pub last_x: DVector<f64>,
    /// Records emitted before the failure, ending with the flagged row.
    pub records: Vec<TrajectoryRecord>,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("function evaluation failed at coordinate {coordinate}: value is not finite")]
    Evaluation { coordinate: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error at `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("diverged at step {}: {}", .0.step, .0.reason)]
    Diverged(Box<Divergence>),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
