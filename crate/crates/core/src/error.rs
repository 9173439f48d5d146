//! Crate-wide error type.

use std::fmt;
use std::io;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by stores, fits, the structure search, the engine, and
/// the file format.
#[derive(Debug)]
pub enum Error {
    /// A range read past the end of a store.
    OutOfBounds {
        offset: u64,
        length: u64,
        total_len: u64,
    },
    /// An underlying I/O operation failed.
    Io(io::Error),
    /// A config document could not be parsed.
    Parse(String),
    /// A storage profile violates its invariants (negative latency or
    /// non-positive bandwidth).
    InvalidProfile(String),
    /// A search space violates its invariants (empty type set, empty
    /// precision grid for an enabled type).
    InvalidSpace(String),
    /// A fit produced at least as many cells as child entries; the layer
    /// would not shrink and is discarded.
    DegenerateFit { cells: u64, entries: u64 },
    /// Post-fit containment re-check failed. This signals a fitting bug and
    /// is never returned as part of normal operation.
    FitVerificationFailed { entry_index: u64 },
    /// A serialized layer window is malformed (misaligned, ragged, or with
    /// non-increasing anchors).
    CorruptLayer(String),
    /// The dataset to index is empty.
    EmptyDataset,
    /// The search space is too large for exhaustive enumeration.
    SpaceTooLarge { chains: u128, limit: u128 },
    /// Point lookup reached the data layer but the key is not present.
    KeyNotFound { key: u64 },
    /// The persisted index is internally inconsistent.
    CorruptIndex(String),
    /// A range scan with begin > end.
    InvalidRange { begin: u64, end: u64 },
    /// An in-memory plan is inconsistent and cannot be serialized.
    InvalidPlan(String),
    /// The file does not start with the index magic.
    BadMagic([u8; 4]),
    /// The file carries a format version this build does not understand.
    UnsupportedVersion(u16),
    /// The header or layer directory is malformed.
    CorruptDirectory(String),
    /// A key input file is not sorted ascending; position is the index of
    /// the first offending key.
    UnsortedInput { position: u64 },
    /// A key input file contains a duplicate key.
    DuplicateKey { key: u64 },
    /// Keys and values files disagree on element count.
    LengthMismatch { keys: u64, values: u64 },
    /// A raw u64 input file has a length that is not a multiple of 8.
    MalformedKeyFile { len: u64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::OutOfBounds {
                offset,
                length,
                total_len,
            } => write!(
                f,
                "read of {length} bytes at offset {offset} exceeds store length {total_len}"
            ),
            Error::Io(e) => write!(f, "i/o failure: {e}"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
            Error::InvalidProfile(msg) => write!(f, "invalid storage profile: {msg}"),
            Error::InvalidSpace(msg) => write!(f, "invalid search space: {msg}"),
            Error::DegenerateFit { cells, entries } => write!(
                f,
                "degenerate fit: {cells} cells over {entries} entries does not shrink"
            ),
            Error::FitVerificationFailed { entry_index } => write!(
                f,
                "fit verification failed: entry {entry_index} escapes its predicted range"
            ),
            Error::CorruptLayer(msg) => write!(f, "corrupt layer window: {msg}"),
            Error::EmptyDataset => write!(f, "dataset is empty"),
            Error::SpaceTooLarge { chains, limit } => write!(
                f,
                "search space has {chains} candidate chains, above the enumeration limit {limit}"
            ),
            Error::KeyNotFound { key } => write!(f, "key {key} not found"),
            Error::CorruptIndex(msg) => write!(f, "corrupt index: {msg}"),
            Error::InvalidRange { begin, end } => {
                write!(f, "invalid range: begin {begin} > end {end}")
            }
            Error::InvalidPlan(msg) => write!(f, "invalid plan: {msg}"),
            Error::BadMagic(got) => write!(f, "bad magic {got:02x?}"),
            Error::UnsupportedVersion(v) => write!(f, "unsupported index version {v}"),
            Error::CorruptDirectory(msg) => write!(f, "corrupt directory: {msg}"),
            Error::UnsortedInput { position } => {
                write!(f, "input keys not sorted ascending at position {position}")
            }
            Error::DuplicateKey { key } => write!(f, "duplicate key {key}"),
            Error::LengthMismatch { keys, values } => write!(
                f,
                "keys file has {keys} entries but values file has {values}"
            ),
            Error::MalformedKeyFile { len } => {
                write!(f, "key file length {len} is not a multiple of 8")
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}
