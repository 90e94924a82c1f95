use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed file content; `offset` is the byte position of the defect.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// Tensor or signal dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// An operation was called outside its contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// Invalid configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// A raw stage code not present in the declared labeling scheme.
    #[error("mapping error: code {code} at index {index} is not a {scheme} code")]
    StageMapping {
        code: u8,
        index: usize,
        scheme: &'static str,
    },

    /// A value-level invariant was violated before any I/O happened.
    #[error("validation error: {0}")]
    Validation(String),

    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
