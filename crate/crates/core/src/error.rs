//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A corpus or embedding file line could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Two dialogues in one corpus share an id.
    #[error("duplicate dialogue id `{0}`")]
    DuplicateDialogue(String),

    /// Mismatched or inconsistent array shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A configuration value violates its invariant.
    #[error("invalid config: {0}")]
    Config(String),

    /// An argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// A gradient block contains NaN or infinity.
    #[error("non-finite gradient in parameter block `{0}`")]
    NonFiniteGradient(String),

    /// A parameter block contains NaN or infinity.
    #[error("non-finite value in parameter block `{0}`")]
    NonFiniteParam(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
