use thiserror::Error;

/// Errors surfaced by the persistent-memory simulator, the table and the
/// transport. Outcome-style results (duplicate key, key not found, needs
/// resize) are not errors; they are ordinary enum returns on the operations
/// that produce them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("access out of bounds: offset {offset} len {len} exceeds capacity {capacity}")]
    OutOfBounds {
        offset: u64,
        len: u64,
        capacity: u64,
    },

    #[error("address {0:#x} is not 8-byte aligned")]
    Misaligned(u64),

    #[error("value length {0} exceeds the 15-byte payload limit")]
    ValueTooLarge(usize),

    #[error("protection error: {0}")]
    Protection(String),

    #[error("peer disconnected")]
    Disconnected,

    #[error("request timed out waiting for completion")]
    Timeout,

    #[error("region allocation failed: need {need} bytes, {free} free")]
    AllocFailed { need: u64, free: u64 },

    #[error("segment pair {0} already has an added SBucket group this epoch")]
    GroupAlreadyAdded(u64),

    #[error("added SBucket group quota exhausted for this epoch")]
    QuotaExhausted,

    #[error("root record integrity failure: {0}")]
    Integrity(String),

    #[error("resize could not place an item in the doubled table")]
    ResizeOverflow,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
