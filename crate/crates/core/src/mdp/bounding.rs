//! Bounding function and contraction certificate for the embedded chain.
//!
//! Costs are unbounded in the field, so the fixed-point argument runs in a
//! weighted sup norm. The weight is built from a cost majorant evaluated
//! along flow-reachable radii, inflated by an exponential factor in the
//! time left to the horizon. This module derives every constant of that
//! construction from model-certified growth and rate bounds, and refuses
//! (with [`CoreError::BoundingOverflow`]) configurations whose certificate
//! does not fit in floating point.

use crate::error::{CoreError, Result};
use crate::mdp::cost::QuadraticCost;
use crate::model::Model;

/// Largest exponent fed to `exp` before we call the certificate unusable.
const MAX_LOG_WEIGHT: f64 = 700.0;

/// The assembled certificate.
#[derive(Clone, Debug)]
pub struct Bounding {
    /// Radius bounding the initial fields the certificate covers.
    pub m2: f64,
    /// Radius reached from `m2` by any admissible flow over one horizon.
    pub m3: f64,
    /// Per-flow inflation of the bounding function.
    pub c_phi: f64,
    /// Sup of the total jump intensity.
    pub rate_upper: f64,
    /// Positive lower margin of the total jump intensity.
    pub delta: f64,
    /// Exponential tilt rate in the time-to-go weight.
    pub zeta: f64,
    /// Contraction factor of the embedded-chain operator (< 1).
    pub contraction: f64,
    /// Bounds a single stage reward against the bounding function.
    pub stage_gain: f64,
    /// The horizon.
    pub horizon: f64,
    cost_u_max: f64,
    b_at_m3: f64,
}

impl Bounding {
    /// Cost majorant at the effective radius of a field norm.
    ///
    /// Radii below `m3` are rounded up to it, which makes the
    /// flow-inflation inequality hold everywhere rather than only on the
    /// `m2` ball.
    pub fn base(&self, field_norm: f64) -> f64 {
        if field_norm <= self.m3 {
            self.b_at_m3
        } else {
            // Cached majorant is monotone in the radius; recompute above m3.
            self.b_at_m3 * (field_norm / self.m3).powi(2).max(1.0)
        }
    }

    /// The bounding function at a jump point with time coordinate `h`.
    pub fn weight(&self, field_norm: f64, h: f64) -> f64 {
        self.base(field_norm) * (self.zeta * (self.horizon - h).max(0.0)).exp()
    }

    /// Natural log of the bounding function (robust for large `zeta`).
    pub fn log_weight(&self, field_norm: f64, h: f64) -> f64 {
        self.base(field_norm).ln() + self.zeta * (self.horizon - h).max(0.0)
    }

    /// Sup of the weight over the covered set (`h = 0`).
    pub fn weight_sup(&self) -> f64 {
        self.weight(self.m3, 0.0)
    }

    /// Natural log of [`Bounding::weight_sup`].
    pub fn log_weight_sup(&self) -> f64 {
        self.log_weight(self.m3, 0.0)
    }

    /// Chain length after which the value-iteration tail, started from the
    /// zero table, is below `tol` in the weighted norm.
    pub fn tail_length(&self, tol: f64) -> usize {
        // stage_gain * C^k / (1 - C) <= tol
        let c = self.contraction;
        let lhs = (tol * (1.0 - c) / self.stage_gain).ln();
        (lhs / c.ln()).ceil().max(1.0) as usize
    }

    /// The control magnitude the certificate was built for.
    pub fn control_sup(&self) -> f64 {
        self.cost_u_max
    }
}

/// Assemble the certificate for `model` under `cost`, covering initial
/// fields of norm at most `m2` over the given horizon.
pub fn bounding_build<M: Model>(
    model: &M,
    cost: &QuadraticCost,
    m2: f64,
    horizon: f64,
) -> Result<Bounding> {
    if !(m2.is_finite() && m2 > 0.0) {
        return Err(CoreError::Config(format!(
            "initial radius must be positive, got {m2}"
        )));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(CoreError::Config(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let growth = model.growth();
    let rates = model.rate_bounds();
    if !(rates.lower > 0.0 && rates.upper.is_finite() && rates.lower <= rates.upper) {
        return Err(CoreError::Config(format!(
            "certified rate bounds ({}, {}) are unusable",
            rates.lower, rates.upper
        )));
    }

    // Flow-reachable radius over one horizon: affine drift bound plus
    // exponential growth (Gronwall).
    let m3 = (m2 + growth.affine * horizon) * (growth.linear * horizon).exp();
    if !m3.is_finite() {
        return Err(CoreError::BoundingOverflow(format!(
            "reachable radius overflows: ({m2} + {}·{horizon})·exp({}·{horizon})",
            growth.affine, growth.linear
        )));
    }

    // Quadratic majorant inflation along a flow.
    let c_phi = (m3 / m2).powi(2);
    if !c_phi.is_finite() {
        return Err(CoreError::BoundingOverflow(
            "flow inflation factor overflows".into(),
        ));
    }

    // Intensity margin. The margin enters through e^{delta h}-type factors,
    // so shave an epsilon to keep the strict inequality strict under
    // round-off.
    let delta = rates.lower - 1e-9;
    if delta <= 0.0 {
        return Err(CoreError::BoundingOverflow(format!(
            "certified intensity floor {} is too small to leave a margin",
            rates.lower
        )));
    }

    // Pick the smallest tilt that certifies a contraction factor of 0.9:
    // the kernel contracts by c_phi * rate_upper / (zeta + delta).
    const TARGET: f64 = 0.9;
    let zeta = (c_phi * rates.upper / TARGET - delta).max(0.0);
    let contraction = c_phi * rates.upper / (zeta + delta);
    if zeta * horizon > MAX_LOG_WEIGHT {
        return Err(CoreError::BoundingOverflow(format!(
            "weight exponent {:.1} exceeds the floating-point budget {MAX_LOG_WEIGHT}",
            zeta * horizon
        )));
    }

    // One stage of reward against the bounding function: the running cost
    // integrates over at most 1/delta expected stage length, plus the
    // terminal collection.
    let stage_gain = c_phi * (1.0 / delta + 1.0);

    let u_max = model.control_bounds().1.abs().max(model.control_bounds().0.abs());
    let b_at_m3 = cost.majorant(m3, u_max).max(1.0);
    if !b_at_m3.is_finite() {
        return Err(CoreError::BoundingOverflow(
            "cost majorant overflows at the reachable radius".into(),
        ));
    }

    Ok(Bounding {
        m2,
        m3,
        c_phi,
        rate_upper: rates.upper,
        delta,
        zeta,
        contraction,
        stage_gain,
        horizon,
        cost_u_max: u_max,
        b_at_m3,
    })
}
