//! Reproducible randomness: one counter-based stream per trajectory.
//!
//! Monte Carlo estimators hand trajectory `i` the stream `i` of a ChaCha
//! generator seeded by the master seed. Streams are statistically
//! independent and indexable, so parallel runs draw identical randomness
//! regardless of scheduling, and any single trajectory can be replayed in
//! isolation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The generator used everywhere randomness is needed.
pub type TrajectoryRng = ChaCha12Rng;

/// The generator for trajectory `index` under `master_seed`.
pub fn trajectory_rng(master_seed: u64, index: u64) -> TrajectoryRng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// A unit-rate exponential variate; `1 - U ∈ (0, 1]` keeps the logarithm
/// finite.
pub fn sample_exp<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -(1.0 - rng.random::<f64>()).ln()
}
