//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, FlowError>;

/// Errors produced by flowlab operations.
///
/// Singularities (division by a vanishing schedule coefficient) are typed
/// errors rather than silent NaNs so that callers and tests can detect them.
#[derive(Debug, Error)]
pub enum FlowError {
    /// An argument violated a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A schedule coefficient vanished where a division was required.
    #[error("singularity: {what} at t = {t}")]
    Singularity { what: &'static str, t: f64 },

    /// An integrator produced or was fed a non-finite value.
    #[error("simulation error at t = {t}: {detail}")]
    Simulation { t: f64, detail: String },

    /// Training aborted (non-finite loss or gradients).
    #[error("training error at step {step}: {detail}")]
    Training { step: usize, detail: String },

    /// A run configuration failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A checkpoint file did not match its declared shapes.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl FlowError {
    /// Process exit code for the CLI: 2 for config errors, 3 for runtime
    /// divergence, 1 for everything else (validation failures).
    pub fn exit_code(&self) -> i32 {
        match self {
            FlowError::InvalidConfig(_) | FlowError::Domain(_) | FlowError::Checkpoint(_) => 2,
            FlowError::Training { .. } | FlowError::Simulation { .. } => 3,
            _ => 1,
        }
    }
}
