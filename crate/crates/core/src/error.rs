use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("truncated payload at byte {offset}: {what}")]
    Truncated { offset: usize, what: &'static str },

    #[error("bad magic at byte {offset}")]
    BadMagic { offset: usize },

    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt stream at byte {offset}: {what}")]
    Corrupt { offset: usize, what: String },

    #[error("symbol {symbol} outside table support [{min}, {max}] at position {index}")]
    SymbolOutOfRange {
        index: usize,
        symbol: i32,
        min: i32,
        max: i32,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("computation error: {0}")]
    Computation(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
