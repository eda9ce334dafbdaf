use std::io;

use thiserror::Error;

/// Errors produced by the perceptual-code pipeline.
#[derive(Debug, Error)]
pub enum PerceptError {
    #[error("i/o error at byte offset {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("length mismatch: expected {expected} payload bytes, found {found}")]
    LengthMismatch { expected: u64, found: u64 },

    #[error("validation error at row {row}, column {column}: {reason}")]
    NonFinite {
        row: usize,
        column: usize,
        reason: &'static str,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("duplicate sample id `{0}`")]
    Duplicate(String),

    #[error("corruption error: {0}")]
    Corruption(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("metadata error: {0}")]
    Metadata(String),

    #[error("spec error: {0}")]
    Spec(String),
}

pub type Result<T> = std::result::Result<T, PerceptError>;

impl PerceptError {
    pub(crate) fn io(offset: u64, source: io::Error) -> Self {
        PerceptError::Io { offset, source }
    }

    /// Error raised when two codes come from banks of different classes.
    pub fn label_mismatch(left: &str, right: &str) -> Self {
        PerceptError::Comparison(format!(
            "class label mismatch: `{left}` vs `{right}`"
        ))
    }
}
