use std::io;

use thiserror::Error;

/// Errors produced by the maskdistill library.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad magic bytes, unsupported version, or malformed structured text.
    #[error("format error: {0}")]
    Format(String),
    /// Payload lengths disagree with the header.
    #[error("corruption error: {0}")]
    Corruption(String),
    /// A value violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),
    /// A caller-supplied parameter is out of range.
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("empty mask has no bounding box")]
    EmptyMask,
    /// A record refers to something that is not available.
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn corruption(msg: impl Into<String>) -> Self {
        Error::Corruption(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
