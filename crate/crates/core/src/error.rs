use std::io;

use thiserror::Error;

/// Errors produced by the memory engine, the corpus tools and persistence.
#[derive(Debug, Error)]
pub enum MemoError {
    /// A hyperparameter or numeric argument is outside its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Matrix or batch dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A token id or word that is not part of the vocabulary.
    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    /// Malformed caller input (wrong window length, empty prompt, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// The file is not a model file this build understands.
    #[error("format error: {0}")]
    Format(String),

    /// The model file ended early or carries inconsistent data.
    #[error("corrupt model file at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl MemoError {
    /// True for errors caused by the caller's arguments rather than by files
    /// or the operating system.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            MemoError::Parameter(_)
                | MemoError::Shape(_)
                | MemoError::Vocabulary(_)
                | MemoError::Input(_)
        )
    }
}

pub type Result<T, E = MemoError> = std::result::Result<T, E>;

pub(crate) fn param(msg: impl Into<String>) -> MemoError {
    MemoError::Parameter(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> MemoError {
    MemoError::Shape(msg.into())
}
