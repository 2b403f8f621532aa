use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside its valid range.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// A model or run configuration is not internally consistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Array shapes or input contents do not match what the operation expects.
    #[error("invalid input: {0}")]
    Input(String),

    /// An operation was called before its prerequisite ran.
    #[error("invalid state: {0}")]
    State(String),

    /// The operation was called with arguments it cannot accept.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("inconsistent labels for ids: {}", ids.join(", "))]
    Consistency { ids: Vec<String> },

    #[error("no output for ids: {}", ids.join(", "))]
    Coverage { ids: Vec<String> },

    #[error("missing upstream artifact: {}", path.display())]
    Dependency { path: PathBuf },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("array file {}: {message}", path.display())]
    Array { path: PathBuf, message: String },

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
