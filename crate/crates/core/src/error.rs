use thiserror::Error;

/// Errors produced by the quantization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix has a zero dimension ({rows}x{cols})")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("data length {len} does not match shape {rows}x{cols}")]
    LengthMismatch { rows: usize, cols: usize, len: usize },

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f32 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported bit width {0}")]
    UnsupportedBits(u8),

    #[error("code {code} out of range for a table of {len} entries (element {index})")]
    CodeOutOfRange { index: usize, code: u32, len: usize },

    #[error("all sample weights are zero")]
    AllZeroWeights,

    #[error("negative or non-finite statistic {value} at channel {index}")]
    InvalidStatistic { index: usize, value: f32 },

    #[error("value {value} overflows the 16-bit target format")]
    NarrowingOverflow { value: f32 },

    #[error("scale {value} of group {group} is not representable in storage precision")]
    ScaleUnrepresentable { group: usize, value: f32 },

    #[error("bad magic bytes {found:?}")]
    MagicMismatch { found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated input at byte offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },

    #[error("invalid header field {field}: {value}")]
    InvalidHeader { field: &'static str, value: u64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
