use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NerdError>;

#[derive(Debug, Error)]
pub enum NerdError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(PathBuf),

    #[error("corrupt image header in {path}: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },

    #[error("cannot write {path}: {reason}")]
    Unwritable { path: PathBuf, reason: String },

    #[error("filter bank: bad magic (expected NERDFB1)")]
    BadMagic,

    #[error("filter bank: payload holds {actual} bytes, header implies {expected}")]
    PayloadSize { expected: usize, actual: usize },

    #[error("filter bank: malformed dimension line: {0}")]
    BadDimensions(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("image is {width}x{height}, smaller than the {kw}x{kh} kernel")]
    ImageTooSmall {
        width: usize,
        height: usize,
        kw: usize,
        kh: usize,
    },

    #[error("ground truth has no positive pixels")]
    EmptyGroundTruth,

    #[error("element {0} is not covered by any region set")]
    UncoveredElement(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
