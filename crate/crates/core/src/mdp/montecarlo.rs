//! Monte Carlo cost estimators: pathwise and through the embedded chain.
//!
//! Both estimators share the trajectory sampler and the per-trajectory
//! random streams, so runs are reproducible bit-for-bit regardless of the
//! worker count. The pathwise estimator integrates the realized running
//! cost along every flow; the chain estimator replaces each stage's
//! realized cost by its conditional expectation given the stage's starting
//! jump point (a Rao–Blackwellization), so agreement of the two means
//! validates the stage-cost construction against the simulator.

use crate::error::Result;
use crate::mdp::bellman::stage_cost;
use crate::mdp::cost::QuadraticCost;
use crate::model::Model;
use crate::pdmp::{embedded_chain, simulate, JumpPoint, SimOptions, Strategy};
use crate::rng::trajectory_rng;
use rayon::prelude::*;

/// A sample-mean estimate with its standard error.
#[derive(Clone, Copy, Debug)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

impl McEstimate {
    fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_err: (var / n as f64).sqrt(),
            n,
        }
    }
}

/// Estimate the expected pathwise cost of `strategy` from `start` over
/// `n` trajectories. Trajectory `i` always uses random stream `i` of
/// `master_seed`.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_cost<M: Model>(
    model: &M,
    strategy: &dyn Strategy<M::Mode>,
    start: &JumpPoint<M::Mode>,
    horizon: f64,
    cost: &QuadraticCost,
    opts: &SimOptions,
    master_seed: u64,
    n: usize,
) -> Result<McEstimate> {
    let samples: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(master_seed, i);
            let traj = simulate(model, strategy, start, horizon, opts, Some(cost), &mut rng)?;
            Ok(traj.cost.expect("cost requested"))
        })
        .collect::<Result<_>>()?;
    Ok(McEstimate::from_samples(&samples))
}

/// Estimate the same expectation through the embedded chain: simulate the
/// jump points, then sum the *expected* stage cost of each visited point
/// under the rule the strategy committed to there.
#[allow(clippy::too_many_arguments)]
pub fn mdp_chain_cost<M: Model>(
    model: &M,
    strategy: &dyn Strategy<M::Mode>,
    start: &JumpPoint<M::Mode>,
    horizon: f64,
    cost: &QuadraticCost,
    opts: &SimOptions,
    master_seed: u64,
    n: usize,
) -> Result<McEstimate> {
    let samples: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(master_seed, i);
            let traj = simulate(model, strategy, start, horizon, opts, None, &mut rng)?;
            let mut total = 0.0;
            for point in embedded_chain(&traj) {
                let rule = strategy.rule_at(&point, horizon - point.h);
                total += stage_cost(model, cost, &point, &rule, horizon, opts.dt)?;
            }
            Ok(total)
        })
        .collect::<Result<_>>()?;
    Ok(McEstimate::from_samples(&samples))
}
