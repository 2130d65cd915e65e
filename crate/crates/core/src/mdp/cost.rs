//! Quadratic tracking costs with control penalties.

use crate::error::{CoreError, Result};
use crate::model::ControlMix;
use crate::spectral::SpectralField;
use serde::{Deserialize, Serialize};

/// Which norm measures the tracking error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostNorm {
    /// Plain `L²`.
    H,
    /// First-order Sobolev with Dirichlet boundary.
    V,
}

/// Running cost `κ ‖v_ref(t) - v‖² + q u² + l u + offset` and terminal cost
/// `κ_T ‖v_ref(end) - v‖² + offset_T`, with the tracking error measured in
/// the chosen norm.
///
/// The reference is constant by default; [`QuadraticCost::with_schedule`]
/// replaces it with a piecewise-linear time series (clamped outside its
/// sample range, so the terminal cost tracks the final sample).
///
/// All quadratic weights and offsets are non-negative, so the cost is
/// non-negative whenever `q u² + l u ≥ -offset` on the control range —
/// with the default `l = 0` it always is.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadraticCost {
    kappa: f64,
    v_ref: SpectralField,
    #[serde(default)]
    schedule: Vec<(f64, SpectralField)>,
    control_quad: f64,
    control_lin: f64,
    offset: f64,
    terminal_quad: f64,
    terminal_offset: f64,
    norm: CostNorm,
}

/// Interpolation weights of a schedule lookup: the reference coefficient is
/// `(1 - w)·schedule[lo] + w·schedule[hi]` componentwise.
struct RefLerp {
    lo: usize,
    hi: usize,
    w: f64,
}

impl QuadraticCost {
    /// Assemble and validate a cost with a constant reference.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kappa: f64,
        v_ref: SpectralField,
        control_quad: f64,
        control_lin: f64,
        offset: f64,
        terminal_quad: f64,
        terminal_offset: f64,
        norm: CostNorm,
    ) -> Result<Self> {
        for (name, value) in [
            ("kappa", kappa),
            ("control_quad", control_quad),
            ("offset", offset),
            ("terminal_quad", terminal_quad),
            ("terminal_offset", terminal_offset),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(CoreError::Config(format!(
                    "cost weight {name} must be finite and non-negative, got {value}"
                )));
            }
        }
        if !control_lin.is_finite() {
            return Err(CoreError::Config("control_lin must be finite".into()));
        }
        if v_ref.coeffs().iter().any(|c| !c.is_finite()) {
            return Err(CoreError::Config("reference profile must be finite".into()));
        }
        Ok(Self {
            kappa,
            v_ref,
            schedule: Vec::new(),
            control_quad,
            control_lin,
            offset,
            terminal_quad,
            terminal_offset,
            norm,
        })
    }

    /// Pure tracking cost: `κ ‖v_ref - v‖²`, everything else zero.
    pub fn tracking(kappa: f64, v_ref: SpectralField, norm: CostNorm) -> Result<Self> {
        Self::new(kappa, v_ref, 0.0, 0.0, 0.0, 0.0, 0.0, norm)
    }

    /// Add the standard quadratic control penalty `q u²`.
    pub fn with_control_quad(mut self, q: f64) -> Result<Self> {
        if !(q.is_finite() && q >= 0.0) {
            return Err(CoreError::Config(format!(
                "control penalty must be non-negative, got {q}"
            )));
        }
        self.control_quad = q;
        Ok(self)
    }

    /// Add a terminal tracking penalty.
    pub fn with_terminal(mut self, quad: f64, offset: f64) -> Result<Self> {
        if !(quad.is_finite() && quad >= 0.0 && offset.is_finite() && offset >= 0.0) {
            return Err(CoreError::Config(
                "terminal weights must be finite and non-negative".into(),
            ));
        }
        self.terminal_quad = quad;
        self.terminal_offset = offset;
        Ok(self)
    }

    /// Replace the constant reference with a time series of profiles.
    ///
    /// Samples must be strictly increasing in time, finite, and match the
    /// constant reference's dimension. Between samples the reference
    /// interpolates linearly; before the first and after the last it stays
    /// at that sample.
    pub fn with_schedule(mut self, samples: Vec<(f64, SpectralField)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(CoreError::Config(
                "a reference schedule needs at least one sample".into(),
            ));
        }
        for pair in samples.windows(2) {
            if pair[0].0 >= pair[1].0 {
                return Err(CoreError::Config(format!(
                    "schedule times must strictly increase, got {} then {}",
                    pair[0].0, pair[1].0
                )));
            }
        }
        for (t, field) in &samples {
            if !t.is_finite() || field.coeffs().iter().any(|c| !c.is_finite()) {
                return Err(CoreError::Config("schedule samples must be finite".into()));
            }
            if field.dim() != self.v_ref.dim() {
                return Err(CoreError::Config(format!(
                    "schedule sample has {} coefficients, reference has {}",
                    field.dim(),
                    self.v_ref.dim()
                )));
            }
        }
        self.schedule = samples;
        Ok(self)
    }

    /// The constant reference profile (superseded when a schedule is set).
    pub fn v_ref(&self) -> &SpectralField {
        &self.v_ref
    }

    /// Tracking weight κ.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Norm of a field in the cost's metric.
    fn field_norm(&self, v: &SpectralField) -> f64 {
        match self.norm {
            CostNorm::H => v.norm_h(),
            CostNorm::V => v.norm_v(),
        }
    }

    /// Locate `t` in the schedule, if one is set.
    fn locate(&self, t: f64) -> Option<RefLerp> {
        let sched = &self.schedule;
        if sched.is_empty() {
            return None;
        }
        let hi = sched.partition_point(|(s, _)| *s < t);
        if hi == 0 {
            return Some(RefLerp { lo: 0, hi: 0, w: 0.0 });
        }
        if hi == sched.len() {
            let last = sched.len() - 1;
            return Some(RefLerp {
                lo: last,
                hi: last,
                w: 0.0,
            });
        }
        let (t0, _) = sched[hi - 1];
        let (t1, _) = sched[hi];
        Some(RefLerp {
            lo: hi - 1,
            hi,
            w: (t - t0) / (t1 - t0),
        })
    }

    /// Squared tracking error against the reference located by `lerp`.
    fn error_square(&self, v: &SpectralField, lerp: &Option<RefLerp>) -> f64 {
        let pi = std::f64::consts::PI;
        v.coeffs()
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let a = match lerp {
                    None => self.v_ref.coeffs()[i],
                    Some(l) => {
                        let lo = self.schedule[l.lo].1.coeffs()[i];
                        let hi = self.schedule[l.hi].1.coeffs()[i];
                        (1.0 - l.w) * lo + l.w * hi
                    }
                };
                let d = a - b;
                let weight = match self.norm {
                    CostNorm::H => 1.0,
                    CostNorm::V => {
                        let kpi = (i + 1) as f64 * pi;
                        1.0 + kpi * kpi
                    }
                };
                weight * d * d
            })
            .sum()
    }

    /// Tracking error `‖v_ref(t) - v‖` in the cost's metric.
    pub fn tracking_error(&self, v: &SpectralField, t: f64) -> f64 {
        self.error_square(v, &self.locate(t)).sqrt()
    }

    /// Running cost at one control level at time `t`.
    pub fn running(&self, v: &SpectralField, u: f64, t: f64) -> f64 {
        let e2 = self.error_square(v, &self.locate(t));
        self.kappa * e2 + self.control_quad * u * u + self.control_lin * u + self.offset
    }

    /// Running cost under a control mixture (the control terms average
    /// over the atoms; the tracking term does not depend on the control).
    pub fn running_mix(&self, v: &SpectralField, mix: ControlMix<'_>, t: f64) -> f64 {
        let e2 = self.error_square(v, &self.locate(t));
        self.kappa * e2
            + mix.average(|u| self.control_quad * u * u + self.control_lin * u)
            + self.offset
    }

    /// Terminal cost (tracks the schedule's final sample when one is set).
    pub fn terminal(&self, v: &SpectralField) -> f64 {
        let e2 = self.error_square(v, &self.locate(f64::INFINITY));
        self.terminal_quad * e2 + self.terminal_offset
    }

    /// An upper bound on running-plus-terminal cost over all fields with
    /// `‖v‖_{L²} ≤ r`, controls with `|u| ≤ u_max`, and all times.
    ///
    /// For the Sobolev metric the `L²` ball is inflated by the truncation
    /// embedding factor `√(1 + (Kπ)²)` of the highest retained mode. A
    /// scheduled reference contributes its largest sample norm (linear
    /// interpolation cannot exceed it).
    pub fn majorant(&self, r: f64, u_max: f64) -> f64 {
        let embed = match self.norm {
            CostNorm::H => 1.0,
            CostNorm::V => {
                let kpi = self.v_ref.dim() as f64 * std::f64::consts::PI;
                (1.0 + kpi * kpi).sqrt()
            }
        };
        let ref_norm = if self.schedule.is_empty() {
            self.field_norm(&self.v_ref)
        } else {
            self.schedule
                .iter()
                .map(|(_, f)| self.field_norm(f))
                .fold(0.0, f64::max)
        };
        let reach = ref_norm + embed * r;
        self.kappa * reach * reach
            + self.control_quad * u_max * u_max
            + self.control_lin.abs() * u_max
            + self.offset
            + self.terminal_quad * reach * reach
            + self.terminal_offset
    }
}
