use alloc::string::String;

/// Failure modes shared by every computation path.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("Hilbert dimension {requested} exceeds the configured maximum {max}")]
    Capacity { requested: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerics(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("measurement operators are not complete (residual {residual:.3e})")]
    Completeness { residual: f64 },

    #[error("outcome probability {prob:.3e} is below the zero-probability threshold")]
    ZeroProbabilityOutcome { prob: f64 },

    #[error("conditioning outcome has vanishing probability (weight {weight:.3e})")]
    DegeneratePostSelection { weight: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("time step {dt} is coarser than the allowed {limit} for this noise")]
    StepSize { dt: f64, limit: f64 },

    #[error("coherence modulus {modulus:.3e} at t = {t} is too small to define rates")]
    SingularCoherence { t: f64, modulus: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
