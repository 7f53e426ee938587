use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("temperature must be positive and finite, got {0}")]
    NonPositiveTemperature(f64),

    #[error("bandwidth must be positive and finite, got {0}")]
    NonPositiveBandwidth(f64),

    #[error("vector {index} has norm {norm}, expected unit norm")]
    NonUnitNorm { index: usize, norm: f64 },

    #[error("batch of size {0} is too small")]
    BatchTooSmall(usize),

    #[error("class index {index} out of range for {classes} classes")]
    InvalidClassIndex { index: usize, classes: usize },

    #[error("at least {need} samples required, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown cohort spec `{0}`")]
    UnknownSpec(String),

    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),

    #[error("fewer than two eligible subgroups for {0}")]
    NoEligibleSubgroups(&'static str),

    #[error("population needs at least one positive and one negative")]
    DegeneratePopulation,

    #[error("both classes are required, only class {0} present")]
    SingleClass(u8),

    #[error("variance of the AUC difference is degenerate ({0:e})")]
    DegenerateVariance(f64),

    #[error("all paired differences are zero")]
    AllZeroDifferences,

    #[error("pooled proportion is {0}; the z statistic is undefined")]
    DegeneratePooled(f64),

    #[error("bootstrap metric failed on {retries} consecutive redraws of resample {resample}")]
    RetryCapExceeded { resample: usize, retries: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
