//! The two-mode scalar benchmark: a linear reaction whose sign flips with
//! the mode, logistic/exponential jump intensities, and a closed-form flow.
//!
//! The reaction is diagonal, `f_k(v, u) = (d + u) v_k` with `d = ±1`, so
//! the stage flow scales every coefficient by
//! `exp(-(kπ)² t + d t + ∫ ū)` — the integrator's exact branch applies and
//! the model doubles as a regression oracle for the whole pipeline.

use crate::model::{
    ControlMix, DiagonalDrift, EnumerableModes, GrowthConstants, Model, RateBounds,
};
use crate::spectral::SpectralField;

/// Safety margin subtracted from the certified intensity lower bound to
/// absorb floating-point rounding in the exponentials.
const RATE_LOWER_MARGIN: f64 = 1e-9;

/// The drift regime: the sign `d` of the linear reaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    Plus,
    Minus,
}

impl Polarity {
    /// The drift sign as a float.
    pub fn d(&self) -> f64 {
        match self {
            Polarity::Plus => 1.0,
            Polarity::Minus => -1.0,
        }
    }

    /// The other regime.
    pub fn flip(&self) -> Polarity {
        match self {
            Polarity::Plus => Polarity::Minus,
            Polarity::Minus => Polarity::Plus,
        }
    }
}

/// The benchmark model.
///
/// * mode `+1`: intensity `1/(exp(-‖v‖²) + 1) + Σ w u²`,
/// * mode `-1`: intensity `exp(-1/(‖v‖² + 1)) + Σ w u²`,
///
/// and every jump deterministically flips the mode. Controls live in
/// `[-u_max, u_max]`.
#[derive(Clone, Debug)]
pub struct ElementaryModel {
    dim: usize,
    u_max: f64,
}

impl ElementaryModel {
    /// A benchmark with `dim` retained modes and control radius `u_max`.
    ///
    /// # Panics
    /// Panics on a zero dimension or a non-positive control radius; both
    /// are programming errors, not data.
    pub fn new(dim: usize, u_max: f64) -> Self {
        assert!(dim >= 1, "the benchmark needs at least one mode");
        assert!(
            u_max.is_finite() && u_max > 0.0,
            "control radius must be positive"
        );
        Self { dim, u_max }
    }

    /// Control radius.
    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    /// State-dependent part of the intensity in the given regime.
    fn base_rate(&self, mode: &Polarity, norm_sq: f64) -> f64 {
        match mode {
            Polarity::Plus => 1.0 / ((-norm_sq).exp() + 1.0),
            Polarity::Minus => (-1.0 / (norm_sq + 1.0)).exp(),
        }
    }
}

impl Model for ElementaryModel {
    type Mode = Polarity;

    fn dim(&self) -> usize {
        self.dim
    }

    fn mode_label(&self, mode: &Polarity) -> String {
        match mode {
            Polarity::Plus => "+1".into(),
            Polarity::Minus => "-1".into(),
        }
    }

    fn diffusion_scale(&self) -> f64 {
        1.0
    }

    fn control_bounds(&self) -> (f64, f64) {
        (-self.u_max, self.u_max)
    }

    fn reaction(
        &self,
        mode: &Polarity,
        field: &SpectralField,
        control: ControlMix<'_>,
        out: &mut [f64],
    ) {
        let gain = mode.d() + control.mean();
        for (o, c) in out.iter_mut().zip(field.coeffs()) {
            *o = gain * c;
        }
    }

    fn diagonal_drift(&self, mode: &Polarity) -> Option<DiagonalDrift> {
        Some(DiagonalDrift {
            offset: mode.d(),
            control_gain: 1.0,
        })
    }

    fn jump_rate(&self, mode: &Polarity, field: &SpectralField, control: ControlMix<'_>) -> f64 {
        let n2 = field.coeffs().iter().map(|c| c * c).sum::<f64>();
        self.base_rate(mode, n2) + control.average(|u| u * u)
    }

    fn transitions(
        &self,
        mode: &Polarity,
        field: &SpectralField,
        control: ControlMix<'_>,
        out: &mut Vec<(Polarity, f64)>,
    ) {
        out.clear();
        out.push((mode.flip(), self.jump_rate(mode, field, control)));
    }

    fn rate_bounds(&self) -> RateBounds {
        // The logistic branch is at least 1/2 and the exponential branch at
        // least e^{-1} (its infimum at the origin); both are at most 1, plus
        // at most u_max² of control contribution. The upper bound keeps one
        // extra unit of slack so it stays valid for perturbed variants.
        RateBounds {
            lower: (0.5f64).min((-1.0f64).exp()) - RATE_LOWER_MARGIN,
            upper: 2.0 + self.u_max * self.u_max,
        }
    }

    fn growth(&self) -> GrowthConstants {
        GrowthConstants {
            affine: 0.0,
            linear: 1.0 + self.u_max,
            lipschitz: 1.0 + self.u_max,
        }
    }
}

impl EnumerableModes for ElementaryModel {
    fn enumerate_modes(&self) -> Vec<Polarity> {
        vec![Polarity::Plus, Polarity::Minus]
    }
}
