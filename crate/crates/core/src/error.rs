//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by bound propagation, data loading, and training.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// Bad configuration value or unknown option.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data; carries the file context and line number.
    #[error("data error in {path} line {line}: {msg}")]
    Data {
        path: String,
        line: usize,
        msg: String,
    },

    /// A caller violated a documented precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The concrete forward value escaped its interval: an internal bug,
    /// never a user error.
    #[error("internal soundness fault: {0}")]
    Soundness(String),

    /// Training diverged or hit a non-finite quantity.
    #[error("training error at epoch {epoch}, batch {batch}: {msg}")]
    Training {
        epoch: usize,
        batch: usize,
        msg: String,
    },

    /// Language-model filtering failed at a specific token position.
    #[error("LM filtering failed at position {position}: {msg}")]
    Filtering { position: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dimension(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn data(path: impl ToString, line: usize, msg: impl ToString) -> Self {
        Error::Data {
            path: path.to_string(),
            line,
            msg: msg.to_string(),
        }
    }
}
