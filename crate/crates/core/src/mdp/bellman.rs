//! Stage evaluation and the Bellman operators of the embedded chain.
//!
//! Between jumps the process is deterministic, so conditioning on a jump
//! point turns the control problem into a discrete-time one: a stage
//! contributes the survival-discounted running cost along its flow (plus
//! the terminal cost if the stage survives to the horizon), and the next
//! chain state is drawn from the survival-discounted jump intensity along
//! the same flow. Both integrals are accumulated with the trapezoid rule
//! on the integrator's own steps, which never straddle control-segment
//! boundaries.

use crate::error::{CoreError, Result};
use crate::flow::FlowStepper;
use crate::mdp::cost::QuadraticCost;
use crate::model::Model;
use crate::pdmp::JumpPoint;
use crate::rule::RelaxedRule;
use crate::spectral::SpectralField;

/// One evaluated stage: its expected cost and its transition kernel.
#[derive(Clone, Debug)]
pub struct StageEval<Mode> {
    /// Survival-discounted running cost, plus the terminal cost collected
    /// with the probability of surviving the whole stage.
    pub cost: f64,
    /// Quadrature-weighted post-jump points: each entry pairs a candidate
    /// next chain state with its kernel mass. Masses sum to one minus the
    /// cemetery mass [`StageEval::survival_end`] (up to quadrature error).
    pub kernel: Vec<(JumpPoint<Mode>, f64)>,
    /// Probability that the stage survives to the horizon (the mass the
    /// kernel sends to the cemetery).
    pub survival_end: f64,
}

/// One trapezoid node: everything the integrands need at a sample time.
struct Node<Mode> {
    t: f64,
    chi: f64,
    run_cost: f64,
    field: SpectralField,
    trans: Vec<(Mode, f64)>,
    weight: f64,
}

impl<Mode: Clone> Node<Mode> {
    fn flush(&mut self, h0: f64, out: &mut StageEval<Mode>) {
        if self.weight <= 0.0 {
            return;
        }
        let scale = self.weight * self.chi;
        out.cost += scale * self.run_cost;
        for (mode, sigma) in &self.trans {
            let mass = scale * sigma;
            if mass > 0.0 {
                out.kernel.push((
                    JumpPoint {
                        field: self.field.clone(),
                        mode: mode.clone(),
                        h: h0 + self.t,
                    },
                    mass,
                ));
            }
        }
        self.weight = 0.0;
    }
}

/// Evaluate one stage of the embedded chain: flow from `point` under
/// `rule` for the residual horizon, integrating cost and kernel in a
/// single pass.
///
/// A point already at the horizon yields the terminal cost, an empty
/// kernel and full cemetery mass.
pub fn stage_eval<M: Model + ?Sized>(
    model: &M,
    cost: &QuadraticCost,
    point: &JumpPoint<M::Mode>,
    rule: &RelaxedRule,
    horizon: f64,
    dt: f64,
) -> Result<StageEval<M::Mode>> {
    stage_eval_impl(model, cost, point, rule, horizon, dt, true)
}

/// Shared integration loop; `collect_kernel = false` skips the transition
/// evaluations entirely, which roughly halves the model calls when only
/// the stage cost is wanted.
fn stage_eval_impl<M: Model + ?Sized>(
    model: &M,
    cost: &QuadraticCost,
    point: &JumpPoint<M::Mode>,
    rule: &RelaxedRule,
    horizon: f64,
    dt: f64,
    collect_kernel: bool,
) -> Result<StageEval<M::Mode>> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(CoreError::InvalidInput(format!(
            "horizon must be finite and positive, got {horizon}"
        )));
    }
    if point.h < 0.0 || point.h > horizon * (1.0 + 1e-12) {
        return Err(CoreError::InvalidInput(format!(
            "jump time {} outside [0, {horizon}]",
            point.h
        )));
    }
    let span = (horizon - point.h).max(0.0);
    let mut stepper = FlowStepper::new(model, &point.mode, &point.field, rule, span, dt)?;

    let mut out = StageEval {
        cost: 0.0,
        kernel: Vec::new(),
        survival_end: 1.0,
    };
    let mut node = Node {
        t: 0.0,
        chi: 1.0,
        run_cost: cost.running_mix(&point.field, stepper.mix(), point.h),
        field: point.field.clone(),
        trans: Vec::new(),
        weight: 0.0,
    };
    if collect_kernel {
        model.transitions(&point.mode, &point.field, stepper.mix(), &mut node.trans);
    }

    while !stepper.done() {
        let rep = stepper.advance()?;
        if rep.switched {
            // The node's right half-interval belongs to the new mixture:
            // emit the old-mixture node and restart it at the same time
            // and field under the mixture that now drives the integrands.
            node.flush(point.h, &mut out);
            node.run_cost = cost.running_mix(stepper.prev_state(), stepper.mix(), point.h + node.t);
            if collect_kernel {
                model.transitions(
                    &point.mode,
                    stepper.prev_state(),
                    stepper.mix(),
                    &mut node.trans,
                );
            }
        }
        let half = 0.5 * (rep.t1 - rep.t0);
        node.weight += half;
        node.flush(point.h, &mut out);

        node.t = rep.t1;
        node.chi = (-rep.haz1).exp();
        node.field = stepper.state().clone();
        node.run_cost = cost.running_mix(&node.field, stepper.mix(), point.h + node.t);
        if collect_kernel {
            model.transitions(&point.mode, &node.field, stepper.mix(), &mut node.trans);
        }
        node.weight = half;
    }
    node.flush(point.h, &mut out);

    out.survival_end = (-stepper.hazard()).exp();
    out.cost += out.survival_end * cost.terminal(stepper.state());
    Ok(out)
}

/// The stage cost alone (see [`stage_eval`]); skips the kernel work.
pub fn stage_cost<M: Model + ?Sized>(
    model: &M,
    cost: &QuadraticCost,
    point: &JumpPoint<M::Mode>,
    rule: &RelaxedRule,
    horizon: f64,
    dt: f64,
) -> Result<f64> {
    Ok(stage_eval_impl(model, cost, point, rule, horizon, dt, false)?.cost)
}

/// Expectation of `value` under a stage's transition kernel. The cemetery
/// contributes nothing: costs end at absorption.
pub fn kernel_expectation<Mode>(
    eval: &StageEval<Mode>,
    value: impl Fn(&JumpPoint<Mode>) -> f64,
) -> f64 {
    eval.kernel.iter().map(|(p, w)| w * value(p)).sum()
}

/// One-stage Bellman update for a fixed rule: stage cost plus the kernel
/// expectation of the continuation value.
pub fn bellman_r<M: Model + ?Sized>(
    model: &M,
    cost: &QuadraticCost,
    point: &JumpPoint<M::Mode>,
    rule: &RelaxedRule,
    horizon: f64,
    dt: f64,
    value: impl Fn(&JumpPoint<M::Mode>) -> f64,
) -> Result<f64> {
    let eval = stage_eval(model, cost, point, rule, horizon, dt)?;
    Ok(eval.cost + kernel_expectation(&eval, value))
}

/// Optimizing Bellman update: minimize [`bellman_r`] over a rule family.
///
/// Returns the optimal value and the index of the rule attaining it. Ties
/// keep the first rule in enumeration order (comparisons are strict), so
/// the returned index is deterministic.
pub fn bellman_t<M: Model + ?Sized>(
    model: &M,
    cost: &QuadraticCost,
    point: &JumpPoint<M::Mode>,
    rules: &[RelaxedRule],
    horizon: f64,
    dt: f64,
    value: impl Fn(&JumpPoint<M::Mode>) -> f64,
) -> Result<(f64, usize)> {
    if rules.is_empty() {
        return Err(CoreError::InvalidInput(
            "the Bellman minimization needs at least one rule".into(),
        ));
    }
    let mut best = f64::INFINITY;
    let mut best_idx = 0;
    for (idx, rule) in rules.iter().enumerate() {
        let val = bellman_r(model, cost, point, rule, horizon, dt, &value)?;
        if val < best {
            best = val;
            best_idx = idx;
        }
    }
    Ok((best, best_idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::cost::CostNorm;
    use crate::models::elementary::{ElementaryModel, Polarity};

    /// Kernel-mass tolerance for a trapezoid quadrature at `dt = 1e-3`.
    const MASS_TOL: f64 = 1e-6;

    fn offset_cost(run: f64, terminal: f64) -> QuadraticCost {
        QuadraticCost::new(
            0.0,
            SpectralField::zeros(1),
            0.0,
            0.0,
            run,
            0.0,
            terminal,
            CostNorm::H,
        )
        .unwrap()
    }

    fn start(field: f64, h: f64) -> JumpPoint<Polarity> {
        JumpPoint {
            field: SpectralField::new(vec![field]),
            mode: Polarity::Plus,
            h,
        }
    }

    #[test]
    fn kernel_mass_and_cemetery_mass_sum_to_one() {
        let model = ElementaryModel::new(1, 1.0);
        let cost = offset_cost(0.0, 0.0);
        // A mixture with a mid-stage switch exercises the duplicated-node
        // bookkeeping in the quadrature.
        let rule = RelaxedRule::new(
            vec![-1.0, 1.0],
            vec![vec![0.25, 0.75], vec![1.0, 0.0]],
        )
        .unwrap();
        let eval = stage_eval(&model, &cost, &start(0.5, 0.0), &rule, 1.0, 1e-3).unwrap();
        let mass: f64 = eval.kernel.iter().map(|(_, w)| w).sum();
        assert!(
            (mass + eval.survival_end - 1.0).abs() < MASS_TOL,
            "kernel {mass} + cemetery {} != 1",
            eval.survival_end
        );
        // Every kernel point keeps the field continuous and advances time.
        for (p, w) in &eval.kernel {
            assert!(*w > 0.0);
            assert_eq!(p.mode, Polarity::Minus);
            assert!((0.0..=1.0).contains(&p.h));
        }
    }

    #[test]
    fn constant_intensity_stage_matches_closed_form() {
        // At the origin the field never moves and the "+1" intensity is
        // exactly 1/2, so the stage integrals are elementary:
        //   cost = run·(1 - e^{-T/2})/(1/2) + g·e^{-T/2}.
        let model = ElementaryModel::new(1, 1.0);
        let cost = offset_cost(2.0, 3.0);
        let rule = RelaxedRule::constant(0.0);
        let eval = stage_eval(&model, &cost, &start(0.0, 0.0), &rule, 1.0, 1e-3).unwrap();
        let chi = (-0.5f64).exp();
        assert!((eval.survival_end - chi).abs() < 1e-12);
        let want = 4.0 * (1.0 - chi) + 3.0 * chi;
        assert!((eval.cost - want).abs() < 1e-7, "got {}", eval.cost);
        // A constant continuation value integrates to the jump mass.
        let cont = kernel_expectation(&eval, |_| 10.0);
        assert!((cont - 10.0 * (1.0 - chi)).abs() < 1e-5);
    }

    #[test]
    fn exhausted_residual_yields_terminal_cost_only() {
        let model = ElementaryModel::new(1, 1.0);
        let cost = offset_cost(5.0, 3.0);
        let rule = RelaxedRule::constant(0.0);
        let eval = stage_eval(&model, &cost, &start(0.7, 1.0), &rule, 1.0, 1e-3).unwrap();
        assert_eq!(eval.cost, 3.0);
        assert!(eval.kernel.is_empty());
        assert_eq!(eval.survival_end, 1.0);
    }

    #[test]
    fn minimization_is_strict_and_first_wins() {
        let model = ElementaryModel::new(1, 1.0);
        // Pure control penalty: playing 0 is strictly cheapest.
        let cost = QuadraticCost::new(
            0.0,
            SpectralField::zeros(1),
            1.0,
            0.0,
            0.0,
            0.0,
            0.0,
            CostNorm::H,
        )
        .unwrap();
        let rules = vec![
            RelaxedRule::constant(0.5),
            RelaxedRule::constant(0.0),
            RelaxedRule::constant(0.0),
        ];
        let (val, idx) =
            bellman_t(&model, &cost, &start(0.3, 0.0), &rules, 1.0, 1e-3, |_| 0.0).unwrap();
        assert_eq!(idx, 1, "ties keep the first rule enumerated");
        let direct =
            bellman_r(&model, &cost, &start(0.3, 0.0), &rules[1], 1.0, 1e-3, |_| 0.0).unwrap();
        assert_eq!(val, direct);
    }

    #[test]
    fn bellman_r_couples_cost_and_continuation() {
        let model = ElementaryModel::new(1, 1.0);
        let cost = offset_cost(1.0, 0.0);
        let rule = RelaxedRule::constant(0.2);
        let point = start(0.4, 0.3);
        let eval = stage_eval(&model, &cost, &point, &rule, 1.0, 1e-3).unwrap();
        let r = bellman_r(&model, &cost, &point, &rule, 1.0, 1e-3, |p| p.h).unwrap();
        let want = eval.cost + kernel_expectation(&eval, |p| p.h);
        assert!((r - want).abs() < 1e-14);
        // The kernel-free path integrates the identical cost.
        let c_only = stage_cost(&model, &cost, &point, &rule, 1.0, 1e-3).unwrap();
        assert_eq!(c_only, eval.cost);
        // Continuation times live strictly after the stage start.
        assert!(eval.kernel.iter().all(|(p, _)| p.h >= 0.3));
    }
}
