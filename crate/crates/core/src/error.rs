use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("block length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("index {index} out of range for block length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-integral block lengths for k={k}; the smallest k giving integral lengths is {suggested_k}")]
    NonIntegralLengths { k: u64, suggested_k: u64 },

    #[error("non-integral index-set size: stage {stage}, channel {channel}, {numerator}/{denominator}")]
    NonIntegralSize {
        stage: usize,
        channel: usize,
        numerator: u64,
        denominator: u64,
    },

    #[error("rate {rate} at stage {stage} is not below capacity {capacity}")]
    RateAboveCapacity { stage: usize, rate: f64, capacity: f64 },

    #[error("block length too small to align channels {cur} and {next}: {available} donors for {needed} mismatched indices")]
    BlockTooSmall {
        cur: usize,
        next: usize,
        available: usize,
        needed: usize,
    },

    #[error("alignment of stage {stage} exceeded t_max={t_max} for channels {cur} and {next} (residual mismatch fraction {residual:.6})")]
    AlignmentFailed {
        stage: usize,
        cur: usize,
        next: usize,
        t_max: u32,
        residual: f64,
    },

    #[error("channel {channel} has {available} reliable indices below the threshold but {needed} are required")]
    InsufficientReliable {
        channel: usize,
        available: usize,
        needed: usize,
    },

    #[error("inconsistent scheme: {0}")]
    Inconsistent(String),

    #[error("missing input: {0}")]
    MissingInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
