use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SpireError>;

#[derive(Debug, Error)]
pub enum SpireError {
    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("invalid electrode geometry: {0}")]
    Geometry(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unsupported dataset: {0}")]
    UnsupportedDataset(String),

    #[error("no dataset container at {}", .0.display())]
    MissingDataset(PathBuf),

    #[error("training diverged at epoch {epoch}: non-finite `{term}` loss")]
    Divergence { epoch: usize, term: String },

    #[error("malformed container at {path}: {reason}")]
    Container { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SpireError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SpireError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        SpireError::Shape(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SpireError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn container(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        SpireError::Container {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
