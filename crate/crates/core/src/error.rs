use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = StarError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum StarError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("corpus is empty after {0}")]
    EmptyCorpus(&'static str),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("negative time interval {0}s")]
    NegativeInterval(i64),

    #[error("item id {id} outside vocabulary of {n} items")]
    ItemOutOfRange { id: usize, n: usize },

    #[error("unknown item `{0}`")]
    UnknownItem(String),

    #[error("non-finite gradient in parameter `{name}` at index {index}")]
    NonFiniteGradient { name: String, index: usize },

    #[error("training diverged: non-finite loss in batch {batch}")]
    Diverged { batch: u64 },

    #[error("glove training diverged at epoch {epoch}")]
    GloveDiverged { epoch: usize },

    #[error("gradient check failed for `{name}` at coordinate {index}: relative error {error:.3e}")]
    GradientCheck { name: String, index: usize, error: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{path}: {error}")]
    Io { path: PathBuf, error: std::io::Error },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl StarError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StarError::Io {
            path: path.into(),
            error: source,
        }
    }
}
