//! The model abstraction: a reaction–diffusion field coupled to a finite
//! jumping mode.
//!
//! A model supplies the deterministic local characteristics (diffusion
//! scale and reaction drift for each mode) and the stochastic ones (total
//! jump intensity and the intensity split across target modes). Controls
//! always enter through a [`ControlMix`], the instantaneous convex mixture
//! of control levels played by a relaxed rule; models that are affine in
//! the control see only its barycentre, everything else must average over
//! the atoms explicitly.

use crate::spectral::SpectralField;

/// Instantaneous relaxed control: a convex mixture of control levels.
///
/// Borrowed views keep the hot loops allocation-free; the two slices have
/// equal length and the weights are non-negative and sum to one.
#[derive(Clone, Copy, Debug)]
pub struct ControlMix<'a> {
    atoms: &'a [f64],
    weights: &'a [f64],
}

impl<'a> ControlMix<'a> {
    /// Pair control levels with their weights.
    ///
    /// # Panics
    /// Panics if the slices differ in length (a programming error, not a
    /// data error: rules validate their weights on construction).
    pub fn new(atoms: &'a [f64], weights: &'a [f64]) -> Self {
        assert_eq!(
            atoms.len(),
            weights.len(),
            "control mixture needs one weight per atom"
        );
        Self { atoms, weights }
    }

    /// The control levels.
    pub fn atoms(&self) -> &[f64] {
        self.atoms
    }

    /// The mixture weights.
    pub fn weights(&self) -> &[f64] {
        self.weights
    }

    /// Barycentre `Σ w_j u_j` of the mixture.
    pub fn mean(&self) -> f64 {
        self.atoms
            .iter()
            .zip(self.weights)
            .map(|(u, w)| u * w)
            .sum()
    }

    /// Weighted average of a scalar function of the control level.
    pub fn average(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.atoms
            .iter()
            .zip(self.weights)
            .map(|(&u, &w)| if w > 0.0 { w * f(u) } else { 0.0 })
            .sum()
    }
}

/// Certified bounds on the total jump intensity over the admissible
/// state–control domain: `lower ≤ λ ≤ upper` with `lower > 0`.
#[derive(Clone, Copy, Debug)]
pub struct RateBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Linear growth and Lipschitz data of the reaction drift in the field
/// variable: `‖f(v, u)‖ ≤ affine + linear·‖v‖` and
/// `‖f(v, u) - f(w, u)‖ ≤ lipschitz·‖v - w‖` for all admissible controls.
#[derive(Clone, Copy, Debug)]
pub struct GrowthConstants {
    pub affine: f64,
    pub linear: f64,
    pub lipschitz: f64,
}

/// Declares that a mode's reaction acts diagonally on the coefficients as
/// `f_k(v, u) = (offset + control_gain · ū) v_k`, which admits an exact
/// per-step flow factor.
#[derive(Clone, Copy, Debug)]
pub struct DiagonalDrift {
    pub offset: f64,
    pub control_gain: f64,
}

/// A controlled reaction–diffusion model with jumping modes.
pub trait Model: Sync {
    /// The discrete mode (regime) the jump process moves through.
    type Mode: Clone + PartialEq + Send + Sync + std::fmt::Debug;

    /// Number of retained sine modes of the field.
    fn dim(&self) -> usize;

    /// Human-readable label for a mode, used in output files.
    fn mode_label(&self, mode: &Self::Mode) -> String;

    /// Scale multiplying the Laplacian (e.g. the inverse membrane
    /// capacitance); the flow applies the heat semigroup at this speed.
    fn diffusion_scale(&self) -> f64;

    /// Admissible control interval `[lo, hi]`.
    fn control_bounds(&self) -> (f64, f64);

    /// Reaction drift `f(v, mix)` in sine coefficients, written into `out`
    /// (length `dim()`). Relaxed controls average the drift over the atoms.
    fn reaction(
        &self,
        mode: &Self::Mode,
        field: &SpectralField,
        control: ControlMix<'_>,
        out: &mut [f64],
    );

    /// Diagonal form of the reaction for this mode, if it has one.
    fn diagonal_drift(&self, mode: &Self::Mode) -> Option<DiagonalDrift>;

    /// Total jump intensity `λ(mode, v, mix)`.
    fn jump_rate(&self, mode: &Self::Mode, field: &SpectralField, control: ControlMix<'_>) -> f64;

    /// Outgoing transitions `(target mode, intensity)`; the intensities sum
    /// to `jump_rate`. Results are appended to `out` (cleared first).
    fn transitions(
        &self,
        mode: &Self::Mode,
        field: &SpectralField,
        control: ControlMix<'_>,
        out: &mut Vec<(Self::Mode, f64)>,
    );

    /// Certified two-sided intensity bounds.
    fn rate_bounds(&self) -> RateBounds;

    /// Certified growth/Lipschitz constants of the reaction drift.
    fn growth(&self) -> GrowthConstants;
}

/// Models whose mode space is small enough to enumerate, as required by
/// the grid-based solver.
pub trait EnumerableModes: Model {
    /// All modes, in a fixed deterministic order.
    fn enumerate_modes(&self) -> Vec<Self::Mode>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_barycentre_and_average() {
        let mix = ControlMix::new(&[-1.0, 0.0, 1.0], &[0.25, 0.25, 0.5]);
        assert!((mix.mean() - 0.25).abs() < 1e-15);
        let second_moment = mix.average(|u| u * u);
        assert!((second_moment - 0.75).abs() < 1e-15);
    }

    #[test]
    #[should_panic(expected = "one weight per atom")]
    fn mismatched_mixture_lengths_panic() {
        let _ = ControlMix::new(&[0.0, 1.0], &[1.0]);
    }
}
