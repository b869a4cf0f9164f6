use thiserror::Error;

/// Errors produced by solvers, simulators and checks.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad grid, bad domain, bad counts, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A documented precondition of an operation was violated.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Non-finite values or a failed linear solve, attributed to a time step.
    #[error("numeric error at step {step}: {message}")]
    Numeric { step: usize, message: String },

    /// Sampled assumption checks reported violations; the solve is refused.
    #[error("assumption validation failed: {0}")]
    Assumptions(String),

    /// Picard iteration exhausted its budget without reaching tolerance.
    #[error("picard iteration did not converge after {iterations} iterations (last delta {last_delta:e})")]
    PicardNoConvergence {
        iterations: usize,
        last_delta: f64,
        /// Weighted-norm deltas observed so far.
        history: Vec<f64>,
    },

    /// Obstacle penalty ramp in the finite-difference solver stalled.
    #[error("obstacle penalty did not converge: complementarity residual {residual:e}")]
    PenaltyNoConvergence { residual: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
