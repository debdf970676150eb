use std::fmt;
use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} out of range for {len} classes")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    /// `p[index] > 0` where `q[index] == 0`.
    #[error("divergence is infinite: p[{index}] > 0 but q[{index}] = 0")]
    InfiniteDivergence { index: usize },

    #[error("empty batch: no mask-true tokens")]
    EmptyBatch,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },

    #[error("training failure: {0}")]
    TrainingFailure(String),

    #[error("parse error at byte {offset}: {kind}")]
    Parse { offset: u64, kind: ParseErrorKind },

    #[error("malformed {}: {detail}", path.display())]
    Malformed { path: PathBuf, detail: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn parse(offset: u64, kind: ParseErrorKind) -> Self {
        Error::Parse { offset, kind }
    }
}

/// What went wrong while decoding a binary file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    BadMagic,
    UnsupportedVersion(u32),
    Truncated { needed: u64, available: u64 },
    TrailingBytes(u64),
    TargetOutOfRange { token: u64, target: u32, classes: u64 },
    InvalidMask { token: u64, value: u8 },
    UnknownFlags(u32),
    InvalidHeader(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::BadMagic => write!(f, "bad magic"),
            ParseErrorKind::UnsupportedVersion(v) => write!(f, "unsupported version {v}"),
            ParseErrorKind::Truncated { needed, available } => {
                write!(f, "truncated: needed {needed} bytes, {available} available")
            }
            ParseErrorKind::TrailingBytes(n) => write!(f, "{n} trailing bytes after payload"),
            ParseErrorKind::TargetOutOfRange {
                token,
                target,
                classes,
            } => write!(f, "target {target} at token {token} is not < {classes}"),
            ParseErrorKind::InvalidMask { token, value } => {
                write!(f, "mask value {value} at token {token} is not 0 or 1")
            }
            ParseErrorKind::UnknownFlags(flags) => write!(f, "unknown flag bits {flags:#x}"),
            ParseErrorKind::InvalidHeader(msg) => write!(f, "invalid header: {msg}"),
        }
    }
}
