use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to choose an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("enumeration too large: C({k},{m}) = {count} exceeds the cap of {cap}")]
    EnumerationTooLarge { k: usize, m: usize, count: u128, cap: u128 },

    #[error("empty response group: n1 = {n1}, n0 = {n0}")]
    EmptyResponseGroup { n1: usize, n0: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("forward state is stale (computed for parameter generation {state}, scorer is at {current})")]
    StaleForward { state: u64, current: u64 },

    #[error("training error: {0}")]
    Training(String),

    #[error("wrong magic number in {path}: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic { path: PathBuf, expected: u32, found: u32 },

    #[error("truncated file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("image/label count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checksum mismatch: file is corrupted")]
    Checksum,

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("csv error in {path}: {detail}")]
    Csv { path: PathBuf, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Precondition(_) => ErrorClass::Config,
            Error::WrongMagic { .. }
            | Error::Truncated { .. }
            | Error::CountMismatch { .. }
            | Error::Format(_)
            | Error::VersionMismatch { .. }
            | Error::Checksum
            | Error::Invariant(_)
            | Error::Csv { .. }
            | Error::Io { .. }
            | Error::Domain(_)
            | Error::DimensionMismatch { .. } => ErrorClass::Data,
            Error::EnumerationTooLarge { .. }
            | Error::EmptyResponseGroup { .. }
            | Error::StaleForward { .. }
            | Error::Training(_) => ErrorClass::Runtime,
        }
    }
}
