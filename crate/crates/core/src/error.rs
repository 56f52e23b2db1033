use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op}: expected length {expected}, got {got}")]
    Length {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{0}: non-finite value")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0}: row norm too close to zero")]
    ZeroNorm(&'static str),

    #[error("nothing to sample: {0}")]
    EmptyPool(&'static str),

    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),

    #[error("plan mismatch: {0}")]
    PlanMismatch(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Failures while decoding one of the binary containers.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("file truncated: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("invalid contents: {0}")]
    Invariant(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures that come from the numbers themselves (NaN/Inf, degenerate norms).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::ZeroNorm(_))
    }

    /// True for failures while reading or validating stored files.
    pub fn is_data(&self) -> bool {
        matches!(self, Error::Format(_) | Error::Io(_) | Error::UnknownDataset(_))
    }
}
