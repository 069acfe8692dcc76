use thiserror::Error;

/// Errors produced by tensor, pyramid, and analysis operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch on {axis} axis: expected {expected}, got {got}")]
    ShapeMismatch {
        axis: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("data length {got} does not match dims {dims:?} (need {expected})")]
    DataLength {
        dims: (usize, usize, usize, usize),
        expected: usize,
        got: usize,
    },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("convolution output {axis} would be {size}; inputs too small for kernel/stride")]
    DegenerateOutput { axis: &'static str, size: i64 },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("downsizing ratio {0} outside (0, 1]")]
    RatioOutOfRange(f64),

    #[error("scale t = {0} must be non-negative")]
    NegativeScale(f64),

    #[error("initial scale s0 = {0} must be positive")]
    NonPositiveInitialScale(f64),

    #[error("{axis} = {dim} not divisible by {divisor}")]
    IndivisibleDims {
        axis: &'static str,
        dim: usize,
        divisor: usize,
    },

    #[error("pyramid must have at least {need} level(s), got {got}")]
    InsufficientLevels { need: usize, got: usize },

    #[error("invalid pyramid: {0}")]
    InvalidPyramid(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad magic bytes {found:02x?}")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported format version {found}")]
    UnsupportedVersion { found: u8 },

    #[error("unsupported tensor rank {found}")]
    UnsupportedRank { found: u8 },

    #[error("truncated payload: expected {expected} more byte(s), got {got}")]
    Truncated { expected: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
