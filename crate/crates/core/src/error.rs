use thiserror::Error;

/// Errors raised by the solver, diagnostics and oracle layers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum CoagError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("kernel evaluated outside its domain at (x={x}, y={y}); sizes must be positive")]
    Domain { x: f64, y: f64 },

    #[error("kernel is not admissible: {0}")]
    Inadmissible(String),

    #[error("singular bound rejected: {0}")]
    InvalidBound(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("initial density is {value} at x={x}; densities must be finite and non-negative")]
    BadDensity { x: f64, value: f64 },

    #[error("test function is not finite at x={x}")]
    BadTestFunction { x: f64 },

    #[error("state does not belong to the rate table's grid")]
    GridMismatch,

    #[error("empty system: {0}")]
    EmptySystem(String),

    #[error("step failed at t={t}: dt={dt} fell below dt_min={dt_min} while {reason}")]
    StepFailure {
        t: f64,
        dt: f64,
        dt_min: f64,
        reason: String,
    },

    #[error(
        "fixed-point iteration did not converge in {iterations} iterations (dt={dt}, last update {last_update:e}); reduce dt"
    )]
    NoConvergence {
        iterations: usize,
        dt: f64,
        last_update: f64,
    },

    #[error("non-finite state at t={t}; last good state kept at t={last_good_t}")]
    NonFinite { t: f64, last_good_t: f64 },

    #[error("trajectory error: {0}")]
    Trajectory(String),

    #[error("oracle error: {0}")]
    Oracle(String),
}

pub type Result<T> = std::result::Result<T, CoagError>;
