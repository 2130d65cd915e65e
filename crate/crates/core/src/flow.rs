//! Deterministic flow between jumps: heat semigroup plus reaction drift,
//! integrated per control segment, with the jump hazard accumulated along
//! the way.
//!
//! Two stepping branches are used. When the active mode's reaction acts
//! diagonally on the coefficients (`f_k = (α + β ū) v_k`) each step applies
//! the exact factor `exp((-(kπ)² s + α + β ū) Δt)`, so the flow is exact up
//! to floating-point rounding no matter the step size. Otherwise a
//! first-order exponential (Lawson–Euler) step
//! `v ← e^{Δt s Δ}(v + Δt f(v))` is taken; its error is first order in the
//! step and is covered by a dedicated convergence test.

use crate::error::{CoreError, Result};
use crate::model::Model;
use crate::rule::RelaxedRule;
use crate::spectral::SpectralField;

/// Absolute tolerance for inverting the hazard when sampling a jump time.
pub const JUMP_TIME_TOL: f64 = 1e-9;

/// Fields whose norm exceeds this are treated as numerical blow-up.
const BLOWUP_NORM: f64 = 1e12;

/// One accepted integration step.
#[derive(Clone, Copy, Debug)]
pub struct StepReport {
    /// Step start time (stage-local).
    pub t0: f64,
    /// Step end time.
    pub t1: f64,
    /// Intensity at `t0` (after any segment switch at `t0`).
    pub lam0: f64,
    /// Intensity at `t1`.
    pub lam1: f64,
    /// Accumulated hazard at `t0`.
    pub haz0: f64,
    /// Accumulated hazard at `t1`.
    pub haz1: f64,
    /// True if the control mixture switched segments at `t0`.
    pub switched: bool,
}

/// Incremental integrator for one inter-jump stage.
///
/// Steps never cross control-segment boundaries, so the intensity and the
/// running cost see a constant mixture within each step; the trapezoid
/// hazard is exact up to the smoothness of `λ` along the flow.
pub struct FlowStepper<'a, M: Model + ?Sized> {
    model: &'a M,
    mode: &'a M::Mode,
    rule: &'a RelaxedRule,
    span: f64,
    dt: f64,
    scale: f64,
    diag: Option<crate::model::DiagonalDrift>,
    state: SpectralField,
    prev_state: SpectralField,
    t: f64,
    prev_t: f64,
    prev_lambda: f64,
    prev_hazard: f64,
    seg: usize,
    lambda: f64,
    hazard: f64,
    /// Cached heat factors for the most recent step size.
    decay_dt: f64,
    decay: Vec<f64>,
    react: Vec<f64>,
}

impl<'a, M: Model + ?Sized> FlowStepper<'a, M> {
    /// Start a stage at `start` under `rule`, to run for `span` time units
    /// with nominal step `dt`.
    pub fn new(
        model: &'a M,
        mode: &'a M::Mode,
        start: &SpectralField,
        rule: &'a RelaxedRule,
        span: f64,
        dt: f64,
    ) -> Result<Self> {
        if !(span.is_finite() && span >= 0.0) {
            return Err(CoreError::InvalidInput(format!(
                "flow span must be finite and non-negative, got {span}"
            )));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(CoreError::InvalidInput(format!(
                "flow step must be finite and positive, got {dt}"
            )));
        }
        if start.dim() != model.dim() {
            return Err(CoreError::InvalidInput(format!(
                "field has {} modes, model expects {}",
                start.dim(),
                model.dim()
            )));
        }
        let dim = model.dim();
        let mut s = Self {
            model,
            mode,
            rule,
            span,
            dt,
            scale: model.diffusion_scale(),
            diag: model.diagonal_drift(mode),
            state: start.clone(),
            prev_state: start.clone(),
            t: 0.0,
            prev_t: 0.0,
            prev_lambda: 0.0,
            prev_hazard: 0.0,
            seg: 0,
            lambda: 0.0,
            hazard: 0.0,
            decay_dt: f64::NAN,
            decay: vec![0.0; dim],
            react: vec![0.0; dim],
        };
        s.lambda = s.eval_lambda();
        s.prev_lambda = s.lambda;
        Ok(s)
    }

    /// Stage-local time of the current sample.
    pub fn t(&self) -> f64 {
        self.t
    }

    /// Field at the current sample.
    pub fn state(&self) -> &SpectralField {
        &self.state
    }

    /// Field at the start of the last accepted step; lets callers form
    /// trapezoid averages without re-running the flow.
    pub fn prev_state(&self) -> &SpectralField {
        &self.prev_state
    }

    /// Intensity at the current sample under the active mixture.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Accumulated hazard `Λ(t)`.
    pub fn hazard(&self) -> f64 {
        self.hazard
    }

    /// Index of the active control segment.
    pub fn segment(&self) -> usize {
        self.seg
    }

    /// The mixture active at the current time. The borrow is tied to the
    /// rule, not the stepper, so callers may keep it across steps.
    pub fn mix(&self) -> crate::model::ControlMix<'a> {
        let rule: &'a RelaxedRule = self.rule;
        rule.mix_of(self.seg)
    }

    /// True once the stage end has been reached.
    pub fn done(&self) -> bool {
        self.span - self.t <= self.eps()
    }

    fn eps(&self) -> f64 {
        1e-12 * self.span.max(1.0)
    }

    fn seg_end(&self) -> f64 {
        let n = self.rule.segments();
        if self.seg + 1 >= n {
            self.span
        } else {
            self.span * (self.seg + 1) as f64 / n as f64
        }
    }

    fn eval_lambda(&self) -> f64 {
        self.model
            .jump_rate(self.mode, &self.state, self.rule.mix_of(self.seg))
    }

    /// Advance one step, never crossing a segment boundary or the stage end.
    pub fn advance(&mut self) -> Result<StepReport> {
        if self.done() {
            return Err(CoreError::InvalidInput(
                "flow stepper advanced past the stage end".into(),
            ));
        }

        // Enter the next control segment if the last step landed on its
        // boundary; the intensity is re-evaluated under the new mixture.
        let mut switched = false;
        while self.seg + 1 < self.rule.segments() && self.seg_end() - self.t <= self.eps() {
            self.seg += 1;
            switched = true;
        }
        if switched {
            self.lambda = self.eval_lambda();
        }

        let t0 = self.t;
        let lam0 = self.lambda;
        let haz0 = self.hazard;
        let target = self.seg_end().min(self.span);
        let dt_eff = (self.dt).min(target - self.t);

        self.prev_state.clone_from(&self.state);
        self.prev_t = t0;
        self.prev_lambda = lam0;
        self.prev_hazard = haz0;

        self.step_in_place(dt_eff)?;

        self.t = if target - (t0 + dt_eff) <= self.eps() {
            target
        } else {
            t0 + dt_eff
        };
        self.lambda = self.eval_lambda();
        self.hazard += 0.5 * dt_eff * (lam0 + self.lambda);

        Ok(StepReport {
            t0,
            t1: self.t,
            lam0,
            lam1: self.lambda,
            haz0,
            haz1: self.hazard,
            switched,
        })
    }

    /// Roll the last step back and re-integrate only up to `t_target`
    /// (used once a jump time inside the last step has been located).
    pub fn restep_to(&mut self, t_target: f64) -> Result<()> {
        if t_target < self.prev_t - self.eps() || t_target > self.t + self.eps() {
            return Err(CoreError::InvalidInput(format!(
                "restep target {t_target} outside the last step [{}, {}]",
                self.prev_t, self.t
            )));
        }
        self.state.clone_from(&self.prev_state);
        let dt_eff = (t_target - self.prev_t).max(0.0);
        let lam0 = self.prev_lambda;
        let haz0 = self.prev_hazard;
        self.t = self.prev_t;
        self.step_in_place(dt_eff)?;
        self.t = t_target;
        self.lambda = self.eval_lambda();
        self.hazard = haz0 + 0.5 * dt_eff * (lam0 + self.lambda);
        Ok(())
    }

    /// One step of length `dt_eff` under the active segment's mixture.
    fn step_in_place(&mut self, dt_eff: f64) -> Result<()> {
        if dt_eff > 0.0 {
            self.refresh_decay(dt_eff);
            let mix = self.rule.mix_of(self.seg);
            match self.diag {
                Some(d) => {
                    // Exact factor for diagonal reactions.
                    let growth = ((d.offset + d.control_gain * mix.mean()) * dt_eff).exp();
                    for (c, dec) in self.state.coeffs_mut().iter_mut().zip(&self.decay) {
                        *c *= dec * growth;
                    }
                }
                None => {
                    // Lawson–Euler: damp the explicit update by the heat flow.
                    self.model.reaction(self.mode, &self.state, mix, &mut self.react);
                    for ((c, f), dec) in self
                        .state
                        .coeffs_mut()
                        .iter_mut()
                        .zip(&self.react)
                        .zip(&self.decay)
                    {
                        *c = dec * (*c + dt_eff * *f);
                    }
                }
            }
        }
        let norm = self.state.norm_h();
        if !norm.is_finite() || norm > BLOWUP_NORM {
            return Err(CoreError::NumericalBlowUp {
                t: self.t + dt_eff,
                detail: format!("field norm reached {norm:.3e}"),
            });
        }
        Ok(())
    }

    fn refresh_decay(&mut self, dt_eff: f64) {
        if self.decay_dt != dt_eff {
            for (i, d) in self.decay.iter_mut().enumerate() {
                let kpi = (i + 1) as f64 * std::f64::consts::PI;
                *d = (-kpi * kpi * self.scale * dt_eff).exp();
            }
            self.decay_dt = dt_eff;
        }
    }
}

/// Sampled flow of one stage: times, fields, intensities and hazard.
///
/// Segment switches contribute a duplicated time node carrying the same
/// field but the new mixture's intensity; zero-width nodes integrate to
/// nothing under the trapezoid rule, so downstream quadrature can treat the
/// arrays uniformly.
#[derive(Clone, Debug)]
pub struct FlowSamples {
    pub ts: Vec<f64>,
    pub fields: Vec<SpectralField>,
    pub rates: Vec<f64>,
    pub hazard: Vec<f64>,
}

impl FlowSamples {
    /// Number of stored samples.
    pub fn len(&self) -> usize {
        self.ts.len()
    }

    /// True if no samples are stored.
    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    /// Survival probability `exp(-Λ(t_i))` at sample `i`.
    pub fn survival(&self, i: usize) -> f64 {
        (-self.hazard[i]).exp()
    }

    /// Total accumulated hazard over the stage.
    pub fn total_hazard(&self) -> f64 {
        *self.hazard.last().unwrap_or(&0.0)
    }
}

/// Integrate one stage and record every accepted step.
///
/// `span` may be zero, in which case only the initial sample is returned.
pub fn flow_integrate<M: Model + ?Sized>(
    model: &M,
    mode: &M::Mode,
    start: &SpectralField,
    rule: &RelaxedRule,
    span: f64,
    dt: f64,
) -> Result<FlowSamples> {
    let mut stepper = FlowStepper::new(model, mode, start, rule, span, dt)?;
    let cap = (span / dt).ceil() as usize + rule.segments() + 2;
    let mut out = FlowSamples {
        ts: Vec::with_capacity(cap),
        fields: Vec::with_capacity(cap),
        rates: Vec::with_capacity(cap),
        hazard: Vec::with_capacity(cap),
    };
    out.ts.push(0.0);
    out.fields.push(start.clone());
    out.rates.push(stepper.lambda());
    out.hazard.push(0.0);

    while !stepper.done() {
        let rep = stepper.advance()?;
        if rep.switched {
            // Duplicate node at the boundary with the new mixture's rate.
            let field = out.fields.last().expect("samples start non-empty").clone();
            out.ts.push(rep.t0);
            out.fields.push(field);
            out.rates.push(rep.lam0);
            out.hazard.push(rep.haz0);
        }
        out.ts.push(rep.t1);
        out.fields.push(stepper.state().clone());
        out.rates.push(rep.lam1);
        out.hazard.push(rep.haz1);
    }
    Ok(out)
}

/// Invert the hazard within one step.
///
/// The intensity is interpolated linearly on the step, so the hazard is the
/// quadratic `Λ(u) = Λ₀ + λ₀ u + (λ₁ - λ₀) u²/(2w)`; the root of
/// `Λ(u) = e` is bracketed by construction and found by bisection to
/// [`JUMP_TIME_TOL`].
pub(crate) fn invert_hazard_on_step(
    t0: f64,
    width: f64,
    lam0: f64,
    lam1: f64,
    haz0: f64,
    e: f64,
) -> f64 {
    let quad = |u: f64| haz0 + lam0 * u + (lam1 - lam0) * u * u / (2.0 * width);
    let mut lo = 0.0f64;
    let mut hi = width;
    while hi - lo > JUMP_TIME_TOL {
        let mid = 0.5 * (lo + hi);
        if quad(mid) < e {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    t0 + 0.5 * (lo + hi)
}

/// Locate the jump time with exponential threshold `e` along sampled flow
/// data, or `None` if the stage survives the whole span.
pub fn sample_jump_time(samples: &FlowSamples, e: f64) -> Option<f64> {
    debug_assert!(e > 0.0, "exponential thresholds are strictly positive");
    for i in 0..samples.len().saturating_sub(1) {
        let width = samples.ts[i + 1] - samples.ts[i];
        if width <= 0.0 {
            continue;
        }
        if samples.hazard[i + 1] >= e {
            return Some(invert_hazard_on_step(
                samples.ts[i],
                width,
                samples.rates[i],
                samples.rates[i + 1],
                samples.hazard[i],
                e,
            ));
        }
    }
    None
}

/// Closed-form stage flow of the two-mode benchmark: every coefficient is
/// scaled by `exp(-(kπ)² t + d t + ∫₀ᵗ ū(s) ds)`, with `ū` the
/// piecewise-constant barycentre path of `rule` on `[0, span]`.
///
/// # Panics
/// Panics if `t` lies outside `[0, span]`.
pub fn flow_exact_elementary(
    d: f64,
    start: &SpectralField,
    rule: &RelaxedRule,
    span: f64,
    t: f64,
) -> SpectralField {
    assert!(
        (0.0..=span * (1.0 + 1e-12) + 1e-300).contains(&t),
        "evaluation time {t} outside the stage [0, {span}]"
    );
    let n = rule.segments();
    let seg_len = span / n as f64;
    let mut integral = 0.0;
    if span > 0.0 {
        for s in 0..n {
            let lo = s as f64 * seg_len;
            if t <= lo {
                break;
            }
            let hi = ((s + 1) as f64 * seg_len).min(t);
            integral += (hi - lo) * rule.mean_of(s);
        }
    }
    let coeffs = start
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let kpi = (i + 1) as f64 * std::f64::consts::PI;
            c * (-kpi * kpi * t + d * t + integral).exp()
        })
        .collect();
    SpectralField::new(coeffs)
}
