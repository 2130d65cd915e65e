//! Optimal control on the chain embedded at jump times.
//!
//! The continuous-time problem is reduced to a discrete-time Markov
//! decision process whose states are jump points `(field, mode, h)` plus a
//! cemetery reached when a stage survives to the horizon. Stage costs
//! integrate the survival-discounted running cost along the flow, the
//! transition kernel integrates the survival-discounted jump intensity,
//! and value iteration contracts in a supremum norm weighted by a bounding
//! function that grows exponentially in the residual horizon.

pub mod bellman;
pub mod bounding;
pub mod cost;
pub mod grid;
pub mod montecarlo;
pub mod value_iteration;

pub use bellman::{bellman_r, bellman_t, kernel_expectation, stage_cost, stage_eval, StageEval};
pub use bounding::{bounding_build, Bounding};
pub use cost::{CostNorm, QuadraticCost};
pub use grid::{Axis, PolicyStrategy, PolicyTable, StateGrid, ValueTable};
pub use montecarlo::{mdp_chain_cost, monte_carlo_cost, McEstimate};
pub use value_iteration::{
    value_iteration, BellmanOperator, SolveDiagnostics, Solution, SolverOptions,
};
