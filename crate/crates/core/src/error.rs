use thiserror::Error;

/// Errors raised by the cyclic urn library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum UrnError {
    /// Invalid number of types, initial type, index or similar input.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// The requested quantity is not defined for this eigen-index or argument.
    #[error("domain error: {0}")]
    Domain(String),
    /// An exact computation would exceed the configured size guard.
    #[error("resource guard: {0}")]
    Resource(String),
}

pub type Result<T> = std::result::Result<T, UrnError>;

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(UrnError::Parameter(msg.into()))
}

pub(crate) fn domain_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(UrnError::Domain(msg.into()))
}
