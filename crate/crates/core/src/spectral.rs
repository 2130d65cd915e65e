//! Sine-basis fields on the unit interval, the heat semigroup, and
//! compactly supported mollifiers used to read out pointwise values.
//!
//! Everything in this module works on truncated expansions
//! `v(x) = Σ_{k=1..K} c_k √2 sin(kπx)`; the basis is orthonormal in
//! `L²(0, 1)`, so inner products and norms reduce to coefficient sums.

use crate::error::{CoreError, Result};
use crate::quad::adaptive_simpson;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// A field on `(0, 1)` stored as coefficients against `√2 sin(kπx)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralField {
    coeffs: Vec<f64>,
}

impl SpectralField {
    /// Wrap a coefficient vector; index `k-1` holds the mode-`k` coefficient.
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    /// The zero field with `dim` retained modes.
    pub fn zeros(dim: usize) -> Self {
        Self {
            coeffs: vec![0.0; dim],
        }
    }

    /// Number of retained modes.
    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    /// Coefficient slice, lowest mode first.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Mutable coefficient slice.
    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// Consume the field and return its coefficients.
    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Evaluate the truncated expansion at `x`.
    pub fn eval(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (i, c) in self.coeffs.iter().enumerate() {
            let k = (i + 1) as f64;
            acc += c * basis_value(k, x);
        }
        acc
    }

    /// `L²(0, 1)` norm (the basis is orthonormal, so this is `√Σ c_k²`).
    pub fn norm_h(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Norm of the first-order Sobolev space with Dirichlet boundary,
    /// `√Σ (1 + (kπ)²) c_k²`.
    pub fn norm_v(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let kpi = (i + 1) as f64 * std::f64::consts::PI;
                (1.0 + kpi * kpi) * c * c
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `L²` inner product with another field (shorter expansion wins).
    pub fn inner(&self, other: &SpectralField) -> f64 {
        self.coeffs
            .iter()
            .zip(other.coeffs.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    /// `L²` distance to another field of the same dimension.
    pub fn distance(&self, other: &SpectralField) -> f64 {
        self.coeffs
            .iter()
            .zip(other.coeffs.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Value of the `k`-th orthonormal sine mode at `x`.
fn basis_value(k: f64, x: f64) -> f64 {
    std::f64::consts::SQRT_2 * (k * std::f64::consts::PI * x).sin()
}

/// Apply the Dirichlet heat semigroup for time `t ≥ 0`.
///
/// The semigroup is diagonal in the sine basis: mode `k` is damped by
/// `exp(-(kπ)² t)`. Negative times are rejected because the backward heat
/// problem is ill-posed.
pub fn semigroup_apply(field: &SpectralField, t: f64) -> Result<SpectralField> {
    if !t.is_finite() || t < 0.0 {
        return Err(CoreError::InvalidInput(format!(
            "semigroup time must be finite and non-negative, got {t}"
        )));
    }
    let coeffs = field
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let kpi = (i + 1) as f64 * std::f64::consts::PI;
            c * (-kpi * kpi * t).exp()
        })
        .collect();
    Ok(SpectralField::new(coeffs))
}

/// The normalisation constant `C` of the standard bump
/// `φ(x) = C exp(1/(x²-1))` on `(-1, 1)`, so that `∫ φ = 1`.
pub fn bump_normalization() -> f64 {
    static NORM: OnceLock<f64> = OnceLock::new();
    *NORM.get_or_init(|| {
        let raw = |x: f64| {
            if x.abs() < 1.0 {
                (1.0 / (x * x - 1.0)).exp()
            } else {
                0.0
            }
        };
        1.0 / adaptive_simpson(&raw, -1.0, 1.0, 1e-13)
    })
}

/// Unnormalised bump profile `exp(1/(x²-1))` extended by zero.
fn bump_raw(x: f64) -> f64 {
    if x.abs() < 1.0 {
        (1.0 / (x * x - 1.0)).exp()
    } else {
        0.0
    }
}

/// A site mollifier `ξ(x) = 2N C φ(2N(x - z))` centred at a lattice site
/// `z = i/N`, together with its truncated sine expansion.
///
/// The support `(z - 1/(2N), z + 1/(2N))` of an interior site stays inside
/// `(0, 1)`, the profile integrates to one, and pairing a field against the
/// mollifier approximates the field value at `z` as the mollifier sharpens.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mollifier {
    site: u32,
    density: u32,
    center: f64,
    mass: f64,
    coeffs: Vec<f64>,
}

impl Mollifier {
    /// Site index `i` in `1..=N-1`.
    pub fn site(&self) -> u32 {
        self.site
    }

    /// Lattice density `N`.
    pub fn density(&self) -> u32 {
        self.density
    }

    /// Centre `z = i/N`.
    pub fn center(&self) -> f64 {
        self.center
    }

    /// Numerically computed mass `∫ ξ` (should be 1 to quadrature accuracy).
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Sine coefficients `(ξ, f_k)` for `k = 1..=dim`.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `L²` norm of the truncated expansion.
    pub fn norm_h(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Pointwise value `ξ(x)` of the exact (untruncated) profile.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.density as f64;
        2.0 * n * bump_normalization() * bump_raw(2.0 * n * (x - self.center))
    }
}

/// Build the mollifier for site `i` of a lattice with density `N`,
/// expanded in the first `dim` sine modes.
///
/// Errors if the site is not interior (`1 ≤ i ≤ N-1`) or if the numerical
/// mass deviates from one by more than `1e-8`, which would indicate a
/// quadrature failure.
pub fn mollifier_build(site: u32, density: u32, dim: usize) -> Result<Mollifier> {
    if density < 2 || site == 0 || site >= density {
        return Err(CoreError::InvalidInput(format!(
            "mollifier site must satisfy 1 <= i <= N-1 with N >= 2, got i = {site}, N = {density}"
        )));
    }
    if dim == 0 {
        return Err(CoreError::InvalidInput(
            "mollifier expansion needs at least one mode".into(),
        ));
    }
    let n = density as f64;
    let center = site as f64 / n;
    let half_width = 1.0 / (2.0 * n);
    let lo = center - half_width;
    let hi = center + half_width;
    let profile = move |x: f64| 2.0 * n * bump_normalization() * bump_raw(2.0 * n * (x - center));

    let mass = adaptive_simpson(&profile, lo, hi, 1e-12);
    if (mass - 1.0).abs() > 1e-8 {
        return Err(CoreError::Quadrature(format!(
            "mollifier mass at site {site}/{density} came out as {mass:.12}, expected 1"
        )));
    }

    let mut coeffs = Vec::with_capacity(dim);
    for k in 1..=dim {
        let kf = k as f64;
        let integrand = |x: f64| profile(x) * basis_value(kf, x);
        coeffs.push(adaptive_simpson(&integrand, lo, hi, 1e-11));
    }

    Ok(Mollifier {
        site,
        density,
        center,
        mass,
        coeffs,
    })
}

/// Inner product `(ξ, v)` of a mollifier with a field, i.e. the mollified
/// read-out of `v` near the mollifier's site.
pub fn field_pairing(mollifier: &Mollifier, field: &SpectralField) -> f64 {
    mollifier
        .coeffs
        .iter()
        .zip(field.coeffs().iter())
        .map(|(a, b)| a * b)
        .sum()
}
