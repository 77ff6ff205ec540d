//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TauError {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Tensor shapes do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A NaN or infinity was produced; tensors must stay finite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// `backward` was called twice on the same tape.
    #[error("gradient tape already consumed; rebuild the forward pass")]
    TapeConsumed,

    /// `backward` was called on a non-scalar value.
    #[error("backward requires a scalar loss, got shape {0:?}")]
    LossNotScalar(Vec<usize>),

    /// Peak detection found fewer than two peaks, so no rate can be derived.
    #[error("insufficient peaks detected")]
    InsufficientPeaks,

    /// A numeric procedure failed to converge or left its valid domain.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, TauError>;
