use thiserror::Error;

/// Errors raised while building models or evaluating histories.
#[derive(Debug, Error)]
pub enum ZenoError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("operator is not Hermitian (max |H - H^dagger| = {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("operator is not a projector (max deviation {deviation:e})")]
    NotProjector { deviation: f64 },

    #[error("operator is not unitary (max |U^dagger U - 1| = {deviation:e})")]
    NotUnitary { deviation: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("wave packet leaks outside the box: overlap deficit {deficit:e} exceeds {threshold:e}")]
    PacketLeak { deficit: f64, threshold: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported for this model: {0}")]
    Unsupported(String),

    #[error("Hermitian eigendecomposition did not converge (dimension {dim})")]
    EigenFailure { dim: usize },
}

impl ZenoError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        ZenoError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = ZenoError> = std::result::Result<T, E>;
