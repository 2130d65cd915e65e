//! Spectral flows, controlled jump processes, and value iteration for
//! reaction–diffusion models on the unit interval.
//!
//! The crate is organised around one deterministic ingredient and one
//! stochastic ingredient:
//!
//! * between jumps the state is a field on `(0, 1)` expanded in the sine
//!   basis and driven by a heat semigroup plus a mode-dependent reaction
//!   term ([`spectral`], [`flow`]);
//! * at random times governed by a state- and control-dependent intensity
//!   the discrete mode jumps, while the field itself is continuous across
//!   jumps ([`pdmp`]).
//!
//! Controls are relaxed: at each instant the controller plays a convex
//! mixture of finitely many control levels ([`rule`]). Optimal control is
//! solved on the chain embedded at jump times by value iteration in a
//! weighted supremum norm whose weight grows exponentially in the residual
//! horizon ([`mdp`]).
//!
//! Two concrete models are provided: a two-mode scalar benchmark with a
//! closed-form flow ([`models::elementary`]) and a stochastic
//! Hodgkin–Huxley cable with light-gated channelrhodopsin channels
//! ([`models::hh`]).

pub mod checks;
pub mod error;
pub mod flow;
pub mod mdp;
pub mod model;
pub mod models;
pub mod pdmp;
pub(crate) mod quad;
pub mod rng;
pub mod rule;
pub mod spectral;

pub use error::{CoreError, Result};
pub use flow::{flow_exact_elementary, flow_integrate, sample_jump_time, FlowSamples, FlowStepper};
pub use model::{ControlMix, DiagonalDrift, EnumerableModes, GrowthConstants, Model, RateBounds};
pub use pdmp::{
    embedded_chain, sample_post_jump, simulate, survival, JumpPoint, JumpRecord, SimOptions,
    Strategy, Trajectory,
};
pub use rule::RelaxedRule;
pub use spectral::{
    bump_normalization, field_pairing, mollifier_build, semigroup_apply, Mollifier, SpectralField,
};
