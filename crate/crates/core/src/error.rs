//! Crate-wide error type.

/// Errors raised by the inversion library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter violated its precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Field dimensions did not match an operator or model.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// A numerical procedure produced non-finite values or broke down.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
