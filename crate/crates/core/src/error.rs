use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed NIfTI header: {0}")]
    Header(String),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("unsupported dimensionality: {0}")]
    Dimension(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid orientation code {0:?}")]
    InvalidOrientation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input is well-formed but cannot be processed meaningfully.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("oracle error: {0}")]
    Oracle(String),
}

impl Error {
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
