//! Error taxonomy shared by every module in this crate.

/// Failure categories for library operations.
///
/// `Format` errors always carry the byte offset of the offending field so
/// corrupt files can be diagnosed without a hex dump session.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input values violate a documented precondition, such as non-finite entries.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A configuration or argument value is outside its documented domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Operand dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A numerical procedure diverged, failed to converge, or produced NaN.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A binary payload does not follow the documented layout.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    /// Cached or stateful arguments do not belong together.
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn format_at(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
