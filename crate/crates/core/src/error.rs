use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("corruption in {file}: {reason}")]
    Corruption { file: String, reason: String },

    #[error("input not sorted: {prev:?} followed by {next:?}")]
    Unsorted { prev: Vec<u8>, next: Vec<u8> },

    #[error("duplicate key {key:?} within run {run}")]
    DuplicateKey { run: usize, key: Vec<u8> },

    #[error("entry of {size} bytes does not fit in limit of {limit} bytes")]
    EntryTooLarge { size: usize, limit: usize },

    #[error("invalid address: {0}")]
    Addressing(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("remix binding mismatch: {0}")]
    Binding(String),

    #[error("memtable is sealed")]
    Sealed,

    #[error("store busy: a flush is already pending")]
    Busy,

    #[error("write-ahead log full ({max} bytes)")]
    LogFull { max: u64 },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("injected crash")]
    Crashed,
}

impl Error {
    pub(crate) fn corruption(file: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Corruption {
            file: file.into(),
            reason: reason.into(),
        }
    }

    /// True when the error came from the fault injector rather than real I/O.
    pub fn is_crash(&self) -> bool {
        matches!(self, Error::Crashed)
    }
}
