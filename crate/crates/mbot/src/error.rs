//! Error type shared by all solvers and estimators.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OtError {
    #[error("support size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("the absolute-difference cost requires 1-dimensional supports, got d={0}")]
    CostRequires1d(usize),

    #[error("batch size {m} exceeds support size {n}")]
    BatchTooLarge { m: usize, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "enumerating {pairs} subset pairs exceeds the cap of {cap}; \
         use the subsampled estimator instead"
    )]
    EnumerationCapExceeded { pairs: u128, cap: u64 },

    #[error("dense export of {entries} entries exceeds the cap of {cap}")]
    DenseCapExceeded { entries: u128, cap: u64 },

    #[error("loss {0} has no position gradient; use an entropic loss")]
    NonDifferentiableLoss(String),

    #[error("gradient flow diverged at step {step}: loss {loss} exceeds 10x the initial {initial}")]
    FlowDiverged { step: usize, loss: f64, initial: f64 },

    #[error("unsupported or malformed image: {0}")]
    ImageFormat(String),

    #[error("malformed input file: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OtError>;
