//! Pathwise simulation of the controlled jump process and its embedded
//! chain.
//!
//! A trajectory alternates deterministic stages (the flow of [`crate::flow`])
//! with mode jumps. Each stage runs on the residual horizon; a stage that
//! reaches the horizon absorbs the process (the chain moves to its
//! cemetery). The field is continuous across jumps — only the mode changes —
//! so the process is fully described by the jump points `(field, mode, h)`.

use crate::error::{CoreError, Result};
use crate::flow::{invert_hazard_on_step, FlowSamples, FlowStepper};
use crate::mdp::cost::QuadraticCost;
use crate::model::{ControlMix, Model};
use crate::rng::sample_exp;
use crate::rule::RelaxedRule;
use crate::spectral::SpectralField;
use rand::Rng;

/// A point of the embedded jump chain: the field and mode immediately
/// after a jump (or at the start), together with its absolute time `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpPoint<Mode> {
    pub field: SpectralField,
    pub mode: Mode,
    pub h: f64,
}

/// One recorded jump: its absolute time, the mode entered, and the field
/// value at the jump (continuous across it).
#[derive(Clone, Debug)]
pub struct JumpRecord<Mode> {
    pub time: f64,
    pub mode: Mode,
    pub field: SpectralField,
}

/// Subsampled dense output of a trajectory.
#[derive(Clone, Debug, Default)]
pub struct DenseSamples {
    pub ts: Vec<f64>,
    pub fields: Vec<SpectralField>,
    /// Number of jumps that occurred strictly before each sample; indexes
    /// into the jump list to recover the active mode.
    pub jump_counts: Vec<u32>,
}

/// A complete simulated trajectory.
#[derive(Clone, Debug)]
pub struct Trajectory<Mode> {
    pub initial: JumpPoint<Mode>,
    pub jumps: Vec<JumpRecord<Mode>>,
    /// True if the horizon was reached (the embedded chain is absorbed).
    pub absorbed: bool,
    pub final_field: SpectralField,
    pub final_mode: Mode,
    /// Accumulated running-plus-terminal cost, if a cost was supplied.
    pub cost: Option<f64>,
    pub dense: Option<DenseSamples>,
}

/// Knobs for the pathwise simulator.
#[derive(Clone, Copy, Debug)]
pub struct SimOptions {
    /// Nominal flow step.
    pub dt: f64,
    /// Record every n-th accepted step (plus stage boundaries) if set.
    pub dense_stride: Option<usize>,
}

/// A piecewise open-loop strategy: at every jump point it commits to a
/// relaxed rule for the whole next stage.
pub trait Strategy<Mode>: Sync {
    /// The rule to play from `point` over the residual horizon.
    fn rule_at(&self, point: &JumpPoint<Mode>, residual: f64) -> RelaxedRule;
}

/// Play one fixed control level forever.
pub struct ConstantControl(pub f64);

impl<Mode> Strategy<Mode> for ConstantControl {
    fn rule_at(&self, _: &JumpPoint<Mode>, _: f64) -> RelaxedRule {
        RelaxedRule::constant(self.0)
    }
}

/// Play the same relaxed rule after every jump.
pub struct FixedRule(pub RelaxedRule);

impl<Mode> Strategy<Mode> for FixedRule {
    fn rule_at(&self, _: &JumpPoint<Mode>, _: f64) -> RelaxedRule {
        self.0.clone()
    }
}

/// Survival curve `exp(-Λ(t_i))` along sampled flow data.
pub fn survival(samples: &FlowSamples) -> Vec<f64> {
    samples.hazard.iter().map(|h| (-h).exp()).collect()
}

/// Draw the post-jump mode: a target is selected with probability
/// proportional to its transition intensity at the jump configuration.
/// The field does not jump.
pub fn sample_post_jump<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    mode: &M::Mode,
    field: &SpectralField,
    control: ControlMix<'_>,
    rng: &mut R,
) -> Result<M::Mode> {
    let mut targets = Vec::new();
    model.transitions(mode, field, control, &mut targets);
    let total: f64 = targets.iter().map(|(_, r)| r).sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(CoreError::InvalidInput(format!(
            "no outgoing transition mass at a jump (total intensity {total})"
        )));
    }
    let mut r = rng.random::<f64>() * total;
    for (target, rate) in &targets {
        r -= rate;
        if r <= 0.0 {
            return Ok(target.clone());
        }
    }
    // Floating-point slack: fall back to the last positive-rate target.
    Ok(targets
        .iter()
        .rev()
        .find(|(_, rate)| *rate > 0.0)
        .map(|(t, _)| t.clone())
        .expect("total mass positive implies a positive-rate target"))
}

/// Simulate one trajectory from `start` up to `horizon`.
///
/// Jump times are drawn by hazard inversion: a unit exponential threshold
/// is compared against the hazard accumulated along the flow, and the
/// crossing is refined inside the bracketing step. If `cost` is given, the
/// running cost is accumulated with the trapezoid rule along every stage
/// (under the stage rule's instantaneous mixture) and the terminal cost is
/// added when the horizon is reached.
pub fn simulate<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    strategy: &dyn Strategy<M::Mode>,
    start: &JumpPoint<M::Mode>,
    horizon: f64,
    opts: &SimOptions,
    cost: Option<&QuadraticCost>,
    rng: &mut R,
) -> Result<Trajectory<M::Mode>> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(CoreError::InvalidInput(format!(
            "horizon must be finite and positive, got {horizon}"
        )));
    }
    if !(0.0..=horizon).contains(&start.h) {
        return Err(CoreError::InvalidInput(format!(
            "start time {} outside [0, {horizon}]",
            start.h
        )));
    }
    if start.field.dim() != model.dim() {
        return Err(CoreError::InvalidInput(format!(
            "field has {} modes, model expects {}",
            start.field.dim(),
            model.dim()
        )));
    }
    let (lo, hi) = model.control_bounds();
    let bounds = model.rate_bounds();
    // A trajectory with intensity bounded by `upper` makes on average at
    // most `upper * horizon` jumps; two orders of magnitude above that is
    // unreachable and indicates a model bug rather than bad luck.
    let jump_cap = (bounds.upper * horizon * 100.0 + 1000.0) as usize;

    let mut point = start.clone();
    let mut jumps: Vec<JumpRecord<M::Mode>> = Vec::new();
    let mut cost_acc = 0.0;
    let mut dense = opts.dense_stride.map(|_| DenseSamples::default());
    let stride = opts.dense_stride.unwrap_or(usize::MAX).max(1);

    if let Some(d) = dense.as_mut() {
        d.ts.push(point.h);
        d.fields.push(point.field.clone());
        d.jump_counts.push(0);
    }

    loop {
        let residual = horizon - point.h;
        if residual <= 0.0 {
            if let Some(c) = cost {
                cost_acc += c.terminal(&point.field);
            }
            return Ok(Trajectory {
                final_field: point.field.clone(),
                final_mode: point.mode.clone(),
                initial: start.clone(),
                jumps,
                absorbed: true,
                cost: cost.map(|_| cost_acc),
                dense,
            });
        }

        let rule = strategy.rule_at(&point, residual);
        for u in rule.atoms() {
            if *u < lo - 1e-9 || *u > hi + 1e-9 {
                return Err(CoreError::Config(format!(
                    "strategy proposed control {u} outside [{lo}, {hi}]"
                )));
            }
        }

        let threshold = sample_exp(rng);
        let mut next_point: Option<JumpPoint<M::Mode>> = None;
        {
            let mut stepper =
                FlowStepper::new(model, &point.mode, &point.field, &rule, residual, opts.dt)?;
            let mut steps = 0usize;

            while !stepper.done() {
                let rep = stepper.advance()?;
                let mix = stepper.mix();

                if rep.haz1 >= threshold {
                    // The jump lies inside this step: locate it, rewind,
                    // and re-integrate the partial step.
                    let t_star = invert_hazard_on_step(
                        rep.t0,
                        rep.t1 - rep.t0,
                        rep.lam0,
                        rep.lam1,
                        rep.haz0,
                        threshold,
                    );
                    stepper.restep_to(t_star)?;
                    if let Some(c) = cost {
                        let c0 = c.running_mix(stepper.prev_state(), mix, point.h + rep.t0);
                        let c1 = c.running_mix(stepper.state(), mix, point.h + t_star);
                        cost_acc += 0.5 * (t_star - rep.t0) * (c0 + c1);
                    }
                    let new_mode =
                        sample_post_jump(model, &point.mode, stepper.state(), mix, rng)?;
                    let np = JumpPoint {
                        field: stepper.state().clone(),
                        mode: new_mode,
                        h: point.h + t_star,
                    };
                    jumps.push(JumpRecord {
                        time: np.h,
                        mode: np.mode.clone(),
                        field: np.field.clone(),
                    });
                    if jumps.len() > jump_cap {
                        return Err(CoreError::InvalidInput(format!(
                            "trajectory exceeded {jump_cap} jumps; intensity bounds look wrong"
                        )));
                    }
                    if let Some(d) = dense.as_mut() {
                        d.ts.push(np.h);
                        d.fields.push(np.field.clone());
                        d.jump_counts.push(jumps.len() as u32);
                    }
                    next_point = Some(np);
                    break;
                }

                if let Some(c) = cost {
                    let c0 = c.running_mix(stepper.prev_state(), mix, point.h + rep.t0);
                    let c1 = c.running_mix(stepper.state(), mix, point.h + rep.t1);
                    cost_acc += 0.5 * (rep.t1 - rep.t0) * (c0 + c1);
                }
                steps += 1;
                if let Some(d) = dense.as_mut() {
                    if steps.is_multiple_of(stride) {
                        d.ts.push(point.h + rep.t1);
                        d.fields.push(stepper.state().clone());
                        d.jump_counts.push(jumps.len() as u32);
                    }
                }
            }

            if next_point.is_none() {
                // Survived the stage: the horizon absorbs the process.
                let final_field = stepper.state().clone();
                if let Some(c) = cost {
                    cost_acc += c.terminal(&final_field);
                }
                if let Some(d) = dense.as_mut() {
                    d.ts.push(horizon);
                    d.fields.push(final_field.clone());
                    d.jump_counts.push(jumps.len() as u32);
                }
                return Ok(Trajectory {
                    final_field,
                    final_mode: point.mode.clone(),
                    initial: start.clone(),
                    jumps,
                    absorbed: true,
                    cost: cost.map(|_| cost_acc),
                    dense,
                });
            }
        }
        point = next_point.expect("a jump was recorded");
    }
}

/// The embedded chain of a trajectory: its initial point followed by one
/// point per jump. The absorption flag of the trajectory tells whether the
/// chain ended in the cemetery (horizon reached).
pub fn embedded_chain<Mode: Clone>(traj: &Trajectory<Mode>) -> Vec<JumpPoint<Mode>> {
    let mut chain = Vec::with_capacity(traj.jumps.len() + 1);
    chain.push(traj.initial.clone());
    for j in &traj.jumps {
        chain.push(JumpPoint {
            field: j.field.clone(),
            mode: j.mode.clone(),
            h: j.time,
        });
    }
    chain
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::flow_exact_elementary;
    use crate::mdp::cost::{CostNorm, QuadraticCost};
    use crate::models::elementary::{ElementaryModel, Polarity};
    use crate::rng::trajectory_rng;

    fn origin_start() -> JumpPoint<Polarity> {
        JumpPoint {
            field: SpectralField::new(vec![0.5]),
            mode: Polarity::Plus,
            h: 0.0,
        }
    }

    #[test]
    fn trajectories_are_reproducible_per_stream() {
        let model = ElementaryModel::new(1, 1.0);
        let opts = SimOptions {
            dt: 1e-3,
            dense_stride: None,
        };
        let run = |stream: u64| {
            let mut rng = trajectory_rng(42, stream);
            simulate(
                &model,
                &ConstantControl(0.0),
                &origin_start(),
                1.0,
                &opts,
                None,
                &mut rng,
            )
            .unwrap()
        };
        let a = run(0);
        let b = run(0);
        let c = run(1);
        assert_eq!(a.jumps.len(), b.jumps.len());
        for (x, y) in a.jumps.iter().zip(&b.jumps) {
            assert_eq!(x.time, y.time);
            assert_eq!(x.mode, y.mode);
        }
        assert!(
            a.jumps.len() != c.jumps.len()
                || a.jumps
                    .iter()
                    .zip(&c.jumps)
                    .any(|(x, y)| x.time != y.time),
            "distinct streams should give distinct paths"
        );
    }

    #[test]
    fn chain_round_trip_reconstructs_the_flow() {
        // Between consecutive jump points the trajectory must be the
        // closed-form stage flow started at the earlier point.
        let model = ElementaryModel::new(1, 1.0);
        let opts = SimOptions {
            dt: 1e-3,
            dense_stride: None,
        };
        // Scan a few independent streams for a path with at least one jump
        // (each stream jumps with probability well above one half, so fifty
        // misses in a row would itself flag a sampler bug).
        let traj = (0..50)
            .map(|stream| {
                let mut rng = trajectory_rng(7, stream);
                simulate(
                    &model,
                    &ConstantControl(0.3),
                    &origin_start(),
                    2.0,
                    &opts,
                    None,
                    &mut rng,
                )
                .unwrap()
            })
            .find(|t| t.jumps.len() >= 2)
            .expect("no stream produced two jumps over two mean waiting times");
        assert!(traj.absorbed);
        let chain = embedded_chain(&traj);
        assert!(chain.len() >= 3, "want at least two jumps for a real check");
        let rule = RelaxedRule::constant(0.3);
        for w in chain.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let residual = 2.0 - a.h;
            let want = flow_exact_elementary(a.mode.d(), &a.field, &rule, residual, b.h - a.h);
            assert!(
                want.distance(&b.field) < 1e-7,
                "flow mismatch across a stage: {:?} vs {:?}",
                want.coeffs(),
                b.field.coeffs()
            );
        }
        // The final leg reaches the horizon.
        let last = chain.last().unwrap();
        let want = flow_exact_elementary(
            last.mode.d(),
            &last.field,
            &rule,
            2.0 - last.h,
            2.0 - last.h,
        );
        assert!(want.distance(&traj.final_field) < 1e-7);
    }

    #[test]
    fn modes_alternate_on_every_jump() {
        let model = ElementaryModel::new(1, 1.0);
        let opts = SimOptions {
            dt: 1e-3,
            dense_stride: None,
        };
        let mut rng = trajectory_rng(3, 0);
        let traj = simulate(
            &model,
            &ConstantControl(0.0),
            &origin_start(),
            4.0,
            &opts,
            None,
            &mut rng,
        )
        .unwrap();
        let chain = embedded_chain(&traj);
        for w in chain.windows(2) {
            assert_ne!(w[0].mode, w[1].mode, "the benchmark always flips modes");
        }
    }

    #[test]
    fn constant_running_cost_integrates_to_the_horizon() {
        // With a state- and control-independent running cost the pathwise
        // integral is exactly horizon * offset + terminal offset, no matter
        // how many jumps occur; this pins the trapezoid bookkeeping across
        // stage boundaries.
        let model = ElementaryModel::new(1, 1.0);
        let cost = QuadraticCost::new(
            0.0,
            SpectralField::zeros(1),
            0.0,
            0.0,
            1.25,
            0.0,
            2.0,
            CostNorm::H,
        )
        .unwrap();
        let opts = SimOptions {
            dt: 1e-3,
            dense_stride: None,
        };
        // Scan streams until a path with several stage boundaries shows up.
        let traj = (0..50)
            .map(|stream| {
                let mut rng = trajectory_rng(9, stream);
                simulate(
                    &model,
                    &ConstantControl(0.7),
                    &origin_start(),
                    3.0,
                    &opts,
                    Some(&cost),
                    &mut rng,
                )
                .unwrap()
            })
            .find(|t| t.jumps.len() >= 2)
            .expect("no stream produced two jumps over three mean waiting times");
        let got = traj.cost.unwrap();
        assert!((got - (3.0 * 1.25 + 2.0)).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn dense_output_tracks_jump_counts() {
        let model = ElementaryModel::new(1, 1.0);
        let opts = SimOptions {
            dt: 1e-3,
            dense_stride: Some(100),
        };
        let mut rng = trajectory_rng(5, 1);
        let traj = simulate(
            &model,
            &ConstantControl(0.0),
            &origin_start(),
            2.0,
            &opts,
            None,
            &mut rng,
        )
        .unwrap();
        let dense = traj.dense.unwrap();
        assert!(dense.ts.len() > 10);
        assert!(dense.ts.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(*dense.jump_counts.last().unwrap() as usize, traj.jumps.len());
        assert_eq!(*dense.ts.last().unwrap(), 2.0);
    }

    #[test]
    fn out_of_bounds_strategy_is_rejected() {
        let model = ElementaryModel::new(1, 1.0);
        let opts = SimOptions {
            dt: 1e-3,
            dense_stride: None,
        };
        let mut rng = trajectory_rng(0, 0);
        let err = simulate(
            &model,
            &ConstantControl(1.5),
            &origin_start(),
            1.0,
            &opts,
            None,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::Config(_)));
    }
}
