use std::path::PathBuf;

use thiserror::Error;

use crate::model::ModelParams;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("row `{row_id}`: {message}")]
    Validation { row_id: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("embedding file {path}:{line}: {message}")]
    Embedding {
        path: String,
        line: usize,
        message: String,
    },

    #[error("no features for clip `{0}`")]
    MissingClip(String),

    #[error("clip `{clip_id}`: dims {found:?} do not match store dims {expected:?}")]
    DimensionMismatch {
        clip_id: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("malformed {kind} file {path}: {message}")]
    Format {
        kind: &'static str,
        path: String,
        message: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at epoch {epoch}, step {step}: non-finite {what}")]
    Diverged {
        epoch: usize,
        step: usize,
        what: &'static str,
        last_good: Box<ModelParams<f32>>,
    },

    #[error("{path}: {source}")]
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

    pub(crate) fn invalid(row_id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            row_id: row_id.into(),
            message: message.into(),
        }
    }

    /// Input data failed to parse or validate, as opposed to a runtime or
    /// numeric failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation { .. }
                | Error::Config(_)
                | Error::Embedding { .. }
                | Error::Format { .. }
        )
    }

    /// Process exit code: 1 for validation failures, 2 for everything else.
    pub fn exit_code(&self) -> u8 {
        if self.is_validation() {
            1
        } else {
            2
        }
    }
}
