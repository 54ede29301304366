use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, left is {left:?}, right is {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward called on a tape with no recorded forward pass")]
    BackwardWithoutForward,

    #[error("non-finite gradient in parameter `{path}`")]
    NonFiniteGradient { path: String },

    #[error("cannot open {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: row {row}: {message}", path.display())]
    Parse {
        path: PathBuf,
        /// 1-based line number in the file, header included.
        row: usize,
        message: String,
    },

    #[error("{}: row {row}: {field} = {value} is outside [0, {limit})", path.display())]
    OutOfRange {
        path: PathBuf,
        row: usize,
        field: &'static str,
        value: i64,
        limit: usize,
    },

    #[error("model format: {0}")]
    Format(String),

    #[error("model file is truncated: {0}")]
    Truncated(String),

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("training stage order violated: {0}")]
    Stage(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
