//! Error types shared across the crate.

/// Convenience alias used by every fallible operation in this crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Bad data fed into a public operation (non-finite weights, empty input, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A caller broke a documented precondition (shape mismatch, index out of range).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced NaN/Inf or diverged.
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// Malformed file: bad magic, truncation, duplicate tensor names, ...
    #[error("format error: {0}")]
    Format(String),

    #[error("unknown format version {0}")]
    UnknownVersion(u8),

    #[error("content hash mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    HashMismatch { stored: u64, computed: u64 },

    /// A bitstream or container is internally inconsistent.
    #[error("corrupt data: {0}")]
    Corruption(String),

    /// A matrix factorization hit a non-positive pivot.
    #[error("singular matrix: {0}")]
    Singular(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
