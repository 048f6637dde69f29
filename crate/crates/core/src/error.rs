use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation received operands whose extents do not line up.
    #[error("{op}: shape mismatch in {dim}: {detail}")]
    Shape {
        op: &'static str,
        dim: &'static str,
        detail: String,
    },

    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("truncated {what}: expected {expected} bytes, found {found}")]
    Truncated {
        what: &'static str,
        expected: u64,
        found: u64,
    },

    #[error("dimensions overflow: {0}")]
    DimensionOverflow(String),

    #[error("unsupported {what}: {value}")]
    Unsupported { what: &'static str, value: String },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("header parse error: {0}")]
    Header(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, dim: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            dim,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field,
            reason: reason.into(),
        }
    }

    /// True for errors raised while reading or writing files, including
    /// malformed file contents.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::BadMagic { .. }
                | Error::Truncated { .. }
                | Error::DimensionOverflow(_)
                | Error::Unsupported { .. }
                | Error::Version { .. }
                | Error::Checksum { .. }
                | Error::Header(_)
        )
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}
