use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised across ingestion, transforms, training, generation and scoring.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("header error: {0}")]
    Header(String),

    #[error("row {row}: cannot parse column `{column}` value {value:?}: {message}")]
    Cell {
        row: usize,
        column: String,
        value: String,
        message: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("cannot encode column `{column}` value {value:?}: {message}")]
    Encoding {
        column: String,
        value: String,
        message: String,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric error in {0}")]
    Numeric(String),

    #[error("training failed at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("unsupported model file version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    #[error("corrupt model file: {0}")]
    Corruption(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
