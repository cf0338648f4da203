use thiserror::Error;

/// Errors raised by the quadrature engine and its building blocks.
#[derive(Debug, Error)]
pub enum BasqError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("variance entries must be positive and finite, got {0}")]
    NonPositiveVariance(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mixture has negative weight {weight} at component {index}; sparsify before sampling")]
    NegativeWeight { index: usize, weight: f64 },

    #[error("kernel matrix not positive definite after jitter {jitter:e} (condition estimate {condition:e})")]
    Factorization { jitter: f64, condition: f64 },

    #[error("evidence mean {0} is not positive; posterior is undefined")]
    NonPositiveEvidence(f64),

    #[error("conditioning slice has zero posterior density")]
    ZeroDensitySlice,

    #[error("recombination needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("recombination elimination step is numerically singular")]
    SingularElimination,

    #[error("likelihood returned {value} at point {point:?}")]
    BadLikelihood { value: f64, point: Vec<f64> },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BasqError>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(BasqError::DimensionMismatch { expected, got })
    }
}
