use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent shapes or topology in motion data, scripts or traces.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient frames: need at least {needed}, got {got}")]
    InsufficientFrames { needed: usize, got: usize },

    #[error("parse error in {path:?} at line {line}{}: {message}", frame.map(|f| format!(" (frame {f})")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        line: usize,
        frame: Option<usize>,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// A loss term became NaN or infinite during training.
    #[error("non-finite loss term `{term}` = {value} at step {step}")]
    NonFiniteLoss { term: String, value: f64, step: u64 },

    #[error("undefined loss: {0}")]
    UndefinedLoss(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("update ordering violation: {0}")]
    Ordering(String),

    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by bad user input rather than numerics or I/O.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Structural(_)
                | Error::Shape(_)
                | Error::Degenerate(_)
                | Error::InsufficientFrames { .. }
                | Error::Parse { .. }
                | Error::Config(_)
                | Error::UndefinedLoss(_)
                | Error::UndefinedMetric(_)
                | Error::Checkpoint(_)
        )
    }
}
