use alloc::string::String;

/// Errors raised by the core routines.
///
/// Variants are grouped by how a caller should react: [`Error::Numerical`] means
/// the optimization diverged, everything else is a bad input.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty distribution")]
    EmptyDistribution,
    #[error("unnormalized weights: sum is {0}")]
    UnnormalizedWeights(f64),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("no neighbors")]
    NoNeighbors,
    #[error("numerical overflow: {0}")]
    Numerical(String),
    #[error("non-positive MAD scale at index {0}")]
    NonPositiveMadScale(usize),
    #[error("MAD scales required")]
    MadScalesRequired,
    #[error("base prediction required in base mode")]
    MissingBasePrediction,
    #[error("tails undefined: need at least 10 test points, got {0}")]
    TailsUndefined(usize),
    #[error("AUROC undefined: labels are all one class")]
    AurocUndefined,
    #[error("all kernel weights are zero")]
    ZeroKernelMass,
    #[error("not enough data: {0}")]
    NotEnoughData(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = core::result::Result<T, Error>;
