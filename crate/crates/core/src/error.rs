//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by flow integration, sampling, and the solver stack.
#[derive(Debug, Error)]
pub enum CoreError {
    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration (model, cost, grid, …) is internally inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// The integrated field left the representable range.
    #[error("numerical blow-up at t = {t:.6e} ({detail})")]
    NumericalBlowUp { t: f64, detail: String },

    /// An adaptive quadrature failed to reach its tolerance.
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    /// The Gronwall/contraction constants are not representable in f64,
    /// so no discount factor below one can be certified.
    #[error("bounding constants not representable: {0}")]
    BoundingOverflow(String),

    /// The weighted decrement of value iteration stopped decreasing, which
    /// contradicts the certified contraction property.
    #[error(
        "value iteration diverged: weighted decrement non-decreasing over {stalled} \
         consecutive iterations (last decrement {last:.3e})"
    )]
    ContractionViolation { stalled: usize, last: f64 },

    /// Value iteration hit its iteration cap before meeting the stopping rule.
    #[error("value iteration hit the iteration cap of {0} before converging")]
    IterationCap(usize),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;
