use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two shapes that must agree do not.
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("shape error at {layer}: {reason}")]
    Shape { layer: String, reason: String },

    #[error("index {index} out of range for {what} of size {bound}")]
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Operation invoked in the wrong lifecycle state (e.g. backward without forward).
    #[error("state error: {0}")]
    State(String),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("bad checkpoint magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
