//! A stochastic Hodgkin–Huxley cable with light-gated channelrhodopsin
//! channels.
//!
//! The membrane potential is a field on `(0, 1)` obeying a cable equation
//! `v' = (1/C_m) Δv + f(v)`; ion channels sit at the interior lattice sites
//! `i/N` and feed current through site mollifiers. Each site carries one
//! channel whose finite-state configuration jumps with voltage-dependent
//! (potassium/sodium) or light-dependent (channelrhodopsin) rates; the
//! channel configuration across all sites is the process mode.
//!
//! Site potentials are read out by mollifier pairing and clamped to the
//! physiological range spanned by the reversal potentials; clamping events
//! are counted so runs can report whether the guard was ever active.

use crate::error::{CoreError, Result};
use crate::model::{ControlMix, DiagonalDrift, GrowthConstants, Model, RateBounds};
use crate::spectral::{field_pairing, mollifier_build, Mollifier, SpectralField};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

/// Voltage-dependent opening/closing rates of the classic gates, in 1/ms
/// with voltages in mV relative to rest.
#[derive(Clone, Copy, Debug)]
pub struct GatingRates {
    pub alpha_n: f64,
    pub beta_n: f64,
    pub alpha_m: f64,
    pub beta_m: f64,
    pub alpha_h: f64,
    pub beta_h: f64,
}

/// `x / (e^x - 1)` with its removable singularity at zero filled in.
///
/// Near zero the closed form loses all significant digits, so a three-term
/// Taylor expansion `1 - x/2 + x²/12` (error `O(x⁴)`, below 1e-16 for
/// |x| < 1e-4) takes over.
fn phi_ratio(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - 0.5 * x + x * x / 12.0
    } else {
        x / x.exp_m1()
    }
}

/// Evaluate all six gating rates at membrane potential `v`.
pub fn gating_rates(v: f64) -> GatingRates {
    GatingRates {
        alpha_n: 0.1 * phi_ratio(1.0 - 0.1 * v),
        beta_n: 0.125 * (-v / 80.0).exp(),
        alpha_m: phi_ratio(2.5 - 0.1 * v),
        beta_m: 4.0 * (-v / 18.0).exp(),
        alpha_h: 0.07 * (-v / 20.0).exp(),
        beta_h: 1.0 / ((3.0 - 0.1 * v).exp() + 1.0),
    }
}

/// Which channelrhodopsin kinetic scheme the light-gated sites use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Chr2Variant {
    /// Two closed and two open states (`c1, o1, o2, c2`).
    FourState,
    /// Closed, open, desensitised (`c, o, d`).
    ThreeState,
}

/// The channel species occupying a lattice site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiteKind {
    Potassium,
    Sodium,
    Channelrhodopsin,
}

/// Per-site channel state codes.
///
/// One byte per site: potassium ladders `n0..n4` are `0..=4`; sodium states
/// `m{k}h{j}` are `5 + k + 4j` (so `m3h1`, the conducting state, is 12);
/// the four-state light scheme uses 13..=16 for `c1, o1, o2, c2` and the
/// three-state scheme 17..=19 for `c, o, d`.
pub mod codes {
    pub const K_N0: u8 = 0;
    pub const K_N4: u8 = 4;
    pub const NA_BASE: u8 = 5;
    pub const NA_M3H1: u8 = 12;
    pub const CHR2_C1: u8 = 13;
    pub const CHR2_O1: u8 = 14;
    pub const CHR2_O2: u8 = 15;
    pub const CHR2_C2: u8 = 16;
    pub const CHR2_C: u8 = 17;
    pub const CHR2_O: u8 = 18;
    pub const CHR2_D: u8 = 19;

    /// Sodium code for activation level `m ∈ 0..=3` and h-gate `h ∈ 0..=1`.
    pub const fn na(m: u8, h: u8) -> u8 {
        NA_BASE + m + 4 * h
    }
}

/// The joint channel configuration: one state byte per interior site.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ChannelConfig(pub Vec<u8>);

impl ChannelConfig {
    /// Human-readable per-site labels joined with `|`.
    pub fn label(&self, kinds: &[SiteKind]) -> String {
        self.0
            .iter()
            .zip(kinds)
            .map(|(&code, &kind)| site_label(kind, code))
            .collect::<Vec<_>>()
            .join("|")
    }
}

fn site_label(kind: SiteKind, code: u8) -> String {
    match kind {
        SiteKind::Potassium => format!("n{code}"),
        SiteKind::Sodium => {
            let off = code - codes::NA_BASE;
            format!("m{}h{}", off % 4, off / 4)
        }
        SiteKind::Channelrhodopsin => match code {
            codes::CHR2_C1 => "c1".into(),
            codes::CHR2_O1 => "o1".into(),
            codes::CHR2_O2 => "o2".into(),
            codes::CHR2_C2 => "c2".into(),
            codes::CHR2_C => "c".into(),
            codes::CHR2_O => "o".into(),
            codes::CHR2_D => "d".into(),
            other => format!("?{other}"),
        },
    }
}

/// Is `code` a valid state for a site of this kind (given the light scheme)?
fn code_valid(kind: SiteKind, variant: Chr2Variant, code: u8) -> bool {
    match kind {
        SiteKind::Potassium => code <= codes::K_N4,
        SiteKind::Sodium => (codes::NA_BASE..=codes::NA_M3H1).contains(&code),
        SiteKind::Channelrhodopsin => match variant {
            Chr2Variant::FourState => (codes::CHR2_C1..=codes::CHR2_C2).contains(&code),
            Chr2Variant::ThreeState => (codes::CHR2_C..=codes::CHR2_D).contains(&code),
        },
    }
}

/// Physical parameters: conductances (mS/cm²), reversal potentials (mV),
/// membrane capacitance (µF/cm²), and light-gating kinetics (1/ms).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HHParams {
    pub g_k: f64,
    pub g_na: f64,
    pub g_leak: f64,
    pub v_k: f64,
    pub v_na: f64,
    pub v_leak: f64,
    pub c_m: f64,
    pub g_chr2: f64,
    /// Conductance ratio of the second open state.
    pub rho: f64,
    pub v_chr2: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub e12: f64,
    pub e21: f64,
    pub kd1: f64,
    pub kd2: f64,
    pub kr: f64,
    /// Lower bound applied to every light-scheme edge so the configuration
    /// chain stays irreducible even in darkness.
    pub delta_floor: f64,
}

impl Default for HHParams {
    fn default() -> Self {
        Self {
            g_k: 36.0,
            g_na: 120.0,
            g_leak: 0.3,
            v_k: -12.0,
            v_na: 115.0,
            v_leak: 10.6,
            c_m: 1.0,
            g_chr2: 0.65,
            rho: 0.1,
            v_chr2: 60.0,
            eps1: 0.5,
            eps2: 0.1,
            e12: 0.05,
            e21: 0.01,
            kd1: 0.13,
            kd2: 0.025,
            kr: 4e-4,
            delta_floor: 1e-6,
        }
    }
}

impl HHParams {
    /// Reject non-physical parameter sets.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("g_k", self.g_k),
            ("g_na", self.g_na),
            ("g_leak", self.g_leak),
            ("c_m", self.c_m),
            ("g_chr2", self.g_chr2),
            ("delta_floor", self.delta_floor),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(CoreError::Config(format!("{name} must be positive, got {value}")));
            }
        }
        let non_negative = [
            ("rho", self.rho),
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("e12", self.e12),
            ("e21", self.e21),
            ("kd1", self.kd1),
            ("kd2", self.kd2),
            ("kr", self.kr),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(CoreError::Config(format!(
                    "{name} must be non-negative, got {value}"
                )));
            }
        }
        for (name, value) in [
            ("v_k", self.v_k),
            ("v_na", self.v_na),
            ("v_leak", self.v_leak),
            ("v_chr2", self.v_chr2),
        ] {
            if !value.is_finite() {
                return Err(CoreError::Config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Light-scheme transition edges `(from, to, rate)` at light intensity `u`.
///
/// Every edge is floored at `delta_floor` so that dark closed states keep a
/// vanishing but positive escape rate.
pub fn chr2_rates(u: f64, params: &HHParams, variant: Chr2Variant) -> Vec<(u8, u8, f64)> {
    let fl = |r: f64| r.max(params.delta_floor);
    match variant {
        Chr2Variant::FourState => vec![
            (codes::CHR2_C1, codes::CHR2_O1, fl(params.eps1 * u)),
            (codes::CHR2_O1, codes::CHR2_C1, fl(params.kd1)),
            (codes::CHR2_O1, codes::CHR2_O2, fl(params.e12)),
            (codes::CHR2_O2, codes::CHR2_O1, fl(params.e21)),
            (codes::CHR2_O2, codes::CHR2_C2, fl(params.kd2)),
            (codes::CHR2_C2, codes::CHR2_O2, fl(params.eps2 * u)),
            (codes::CHR2_C2, codes::CHR2_C1, fl(params.kr)),
        ],
        Chr2Variant::ThreeState => vec![
            (codes::CHR2_C, codes::CHR2_O, fl(u)),
            (codes::CHR2_O, codes::CHR2_D, fl(params.kd1)),
            (codes::CHR2_D, codes::CHR2_C, fl(params.kr)),
        ],
    }
}

/// The cable model.
pub struct HodgkinHuxleyModel {
    params: HHParams,
    density: u32,
    dim: usize,
    u_max: f64,
    variant: Chr2Variant,
    site_kinds: Vec<SiteKind>,
    mollifiers: Vec<Mollifier>,
    v_min: f64,
    v_max: f64,
    bounds: RateBounds,
    growth: GrowthConstants,
    clamp_events: AtomicU64,
}

impl HodgkinHuxleyModel {
    /// Build a cable with `density`-spaced sites (`N`), `dim` retained
    /// field modes, light intensities in `[0, u_max]`, and channel kinds
    /// assigned round-robin as sodium, potassium, channelrhodopsin.
    pub fn new(
        density: u32,
        dim: usize,
        u_max: f64,
        variant: Chr2Variant,
        params: HHParams,
    ) -> Result<Self> {
        let kinds = (0..density.saturating_sub(1))
            .map(|i| match i % 3 {
                0 => SiteKind::Sodium,
                1 => SiteKind::Potassium,
                _ => SiteKind::Channelrhodopsin,
            })
            .collect();
        Self::with_site_kinds(density, dim, u_max, variant, params, kinds)
    }

    /// Build a cable with an explicit channel species per interior site.
    pub fn with_site_kinds(
        density: u32,
        dim: usize,
        u_max: f64,
        variant: Chr2Variant,
        params: HHParams,
        site_kinds: Vec<SiteKind>,
    ) -> Result<Self> {
        params.validate()?;
        if density < 2 {
            return Err(CoreError::Config(format!(
                "site density must be at least 2, got {density}"
            )));
        }
        if dim == 0 {
            return Err(CoreError::Config("the field needs at least one mode".into()));
        }
        if !(u_max.is_finite() && u_max > 0.0) {
            return Err(CoreError::Config(format!(
                "light intensity bound must be positive, got {u_max}"
            )));
        }
        if site_kinds.len() != (density - 1) as usize {
            return Err(CoreError::Config(format!(
                "{} site kinds supplied for {} interior sites",
                site_kinds.len(),
                density - 1
            )));
        }
        let mollifiers = (1..density)
            .map(|i| mollifier_build(i, density, dim))
            .collect::<Result<Vec<_>>>()?;

        let v_min = params.v_k.min(params.v_na).min(params.v_leak).min(params.v_chr2).min(0.0);
        let v_max = params.v_k.max(params.v_na).max(params.v_leak).max(params.v_chr2).max(0.0);

        let bounds = certified_rate_bounds(&params, variant, &site_kinds, u_max, v_min, v_max);
        let growth = certified_growth(&params, variant, &site_kinds, &mollifiers, v_min, v_max);

        Ok(Self {
            params,
            density,
            dim,
            u_max,
            variant,
            site_kinds,
            mollifiers,
            v_min,
            v_max,
            bounds,
            growth,
            clamp_events: AtomicU64::new(0),
        })
    }

    /// Model parameters.
    pub fn params(&self) -> &HHParams {
        &self.params
    }

    /// Lattice density `N`.
    pub fn density(&self) -> u32 {
        self.density
    }

    /// Light scheme in use.
    pub fn variant(&self) -> Chr2Variant {
        self.variant
    }

    /// Channel species per interior site.
    pub fn site_kinds(&self) -> &[SiteKind] {
        &self.site_kinds
    }

    /// The physiological clamp range for site potentials.
    pub fn voltage_range(&self) -> (f64, f64) {
        (self.v_min, self.v_max)
    }

    /// How often a site potential had to be clamped so far.
    pub fn clamp_count(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }

    /// Reset the clamp counter (e.g. between runs sharing a model).
    pub fn reset_clamp_count(&self) {
        self.clamp_events.store(0, Ordering::Relaxed);
    }

    /// The all-gates-shut configuration used as the default start: `n0`,
    /// `m0h1` (h-gate open at rest) and the first closed light state.
    pub fn rest_config(&self) -> ChannelConfig {
        let code = |kind: SiteKind| match kind {
            SiteKind::Potassium => codes::K_N0,
            SiteKind::Sodium => codes::na(0, 1),
            SiteKind::Channelrhodopsin => match self.variant {
                Chr2Variant::FourState => codes::CHR2_C1,
                Chr2Variant::ThreeState => codes::CHR2_C,
            },
        };
        ChannelConfig(self.site_kinds.iter().map(|&k| code(k)).collect())
    }

    /// Validate a configuration against the site layout.
    pub fn config_valid(&self, config: &ChannelConfig) -> bool {
        config.0.len() == self.site_kinds.len()
            && config
                .0
                .iter()
                .zip(&self.site_kinds)
                .all(|(&code, &kind)| code_valid(kind, self.variant, code))
    }

    /// Clamped potential at site `i` (0-based), counting clamp events.
    pub fn site_potential(&self, field: &SpectralField, site: usize) -> f64 {
        let raw = field_pairing(&self.mollifiers[site], field);
        if raw < self.v_min || raw > self.v_max {
            self.clamp_events.fetch_add(1, Ordering::Relaxed);
            raw.clamp(self.v_min, self.v_max)
        } else {
            raw
        }
    }

    /// Enumerate the outgoing edges of one site at clamped potential `v_i`,
    /// with light-driven rates averaged over the control mixture.
    fn for_each_site_edge(
        &self,
        kind: SiteKind,
        code: u8,
        v_i: f64,
        control: ControlMix<'_>,
        mut visit: impl FnMut(u8, f64),
    ) {
        match kind {
            SiteKind::Potassium => {
                let g = gating_rates(v_i);
                let n = code;
                if n < 4 {
                    visit(n + 1, (4 - n) as f64 * g.alpha_n);
                }
                if n > 0 {
                    visit(n - 1, n as f64 * g.beta_n);
                }
            }
            SiteKind::Sodium => {
                let g = gating_rates(v_i);
                let off = code - codes::NA_BASE;
                let (m, h) = (off % 4, off / 4);
                if m < 3 {
                    visit(codes::na(m + 1, h), (3 - m) as f64 * g.alpha_m);
                }
                if m > 0 {
                    visit(codes::na(m - 1, h), m as f64 * g.beta_m);
                }
                if h == 1 {
                    visit(codes::na(m, 0), g.beta_h);
                } else {
                    visit(codes::na(m, 1), g.alpha_h);
                }
            }
            SiteKind::Channelrhodopsin => {
                let p = &self.params;
                let fl = |r: f64| r.max(p.delta_floor);
                match self.variant {
                    Chr2Variant::FourState => match code {
                        codes::CHR2_C1 => {
                            visit(codes::CHR2_O1, control.average(|u| fl(p.eps1 * u)));
                        }
                        codes::CHR2_O1 => {
                            visit(codes::CHR2_C1, fl(p.kd1));
                            visit(codes::CHR2_O2, fl(p.e12));
                        }
                        codes::CHR2_O2 => {
                            visit(codes::CHR2_O1, fl(p.e21));
                            visit(codes::CHR2_C2, fl(p.kd2));
                        }
                        codes::CHR2_C2 => {
                            visit(codes::CHR2_O2, control.average(|u| fl(p.eps2 * u)));
                            visit(codes::CHR2_C1, fl(p.kr));
                        }
                        other => unreachable!("invalid four-state code {other}"),
                    },
                    Chr2Variant::ThreeState => match code {
                        codes::CHR2_C => visit(codes::CHR2_O, control.average(fl)),
                        codes::CHR2_O => visit(codes::CHR2_D, fl(p.kd1)),
                        codes::CHR2_D => visit(codes::CHR2_C, fl(p.kr)),
                        other => unreachable!("invalid three-state code {other}"),
                    },
                }
            }
        }
    }

    /// Conductance and reversal potential contributed by a site's channel
    /// in its current state.
    fn channel_conductance(&self, kind: SiteKind, code: u8) -> (f64, f64) {
        let p = &self.params;
        match kind {
            SiteKind::Potassium => {
                let g = if code == codes::K_N4 { p.g_k } else { 0.0 };
                (g, p.v_k)
            }
            SiteKind::Sodium => {
                let g = if code == codes::NA_M3H1 { p.g_na } else { 0.0 };
                (g, p.v_na)
            }
            SiteKind::Channelrhodopsin => {
                let g = match code {
                    codes::CHR2_O1 => p.g_chr2,
                    codes::CHR2_O2 => p.g_chr2 * p.rho,
                    codes::CHR2_O => p.g_chr2,
                    _ => 0.0,
                };
                (g, p.v_chr2)
            }
        }
    }
}

impl Model for HodgkinHuxleyModel {
    type Mode = ChannelConfig;

    fn dim(&self) -> usize {
        self.dim
    }

    fn mode_label(&self, mode: &ChannelConfig) -> String {
        mode.label(&self.site_kinds)
    }

    fn diffusion_scale(&self) -> f64 {
        1.0 / self.params.c_m
    }

    fn control_bounds(&self) -> (f64, f64) {
        (0.0, self.u_max)
    }

    fn reaction(
        &self,
        mode: &ChannelConfig,
        field: &SpectralField,
        _control: ControlMix<'_>,
        out: &mut [f64],
    ) {
        debug_assert!(self.config_valid(mode), "invalid channel configuration");
        out.fill(0.0);
        let inv_n = 1.0 / self.density as f64;
        for (site, (&code, &kind)) in mode.0.iter().zip(&self.site_kinds).enumerate() {
            let v_i = self.site_potential(field, site);
            let (g_ch, v_rev) = self.channel_conductance(kind, code);
            let current =
                g_ch * (v_rev - v_i) + self.params.g_leak * (self.params.v_leak - v_i);
            let scale = inv_n * current;
            for (o, xi) in out.iter_mut().zip(self.mollifiers[site].coeffs()) {
                *o += scale * xi;
            }
        }
    }

    fn diagonal_drift(&self, _: &ChannelConfig) -> Option<DiagonalDrift> {
        None
    }

    fn jump_rate(
        &self,
        mode: &ChannelConfig,
        field: &SpectralField,
        control: ControlMix<'_>,
    ) -> f64 {
        debug_assert!(self.config_valid(mode), "invalid channel configuration");
        let mut total = 0.0;
        for (site, (&code, &kind)) in mode.0.iter().zip(&self.site_kinds).enumerate() {
            let v_i = self.site_potential(field, site);
            self.for_each_site_edge(kind, code, v_i, control, |_, r| total += r);
        }
        total
    }

    fn transitions(
        &self,
        mode: &ChannelConfig,
        field: &SpectralField,
        control: ControlMix<'_>,
        out: &mut Vec<(ChannelConfig, f64)>,
    ) {
        debug_assert!(self.config_valid(mode), "invalid channel configuration");
        out.clear();
        for (site, (&code, &kind)) in mode.0.iter().zip(&self.site_kinds).enumerate() {
            let v_i = self.site_potential(field, site);
            self.for_each_site_edge(kind, code, v_i, control, |target, rate| {
                let mut next = mode.clone();
                next.0[site] = target;
                out.push((next, rate));
            });
        }
    }

    fn rate_bounds(&self) -> RateBounds {
        self.bounds
    }

    fn growth(&self) -> GrowthConstants {
        self.growth
    }
}

/// Certified intensity bounds.
///
/// Every gating rate is monotone in the (clamped) potential, so each edge
/// attains its extrema at the clamp endpoints, and light-driven edges are
/// monotone in the intensity. Summing per-state edge extrema therefore
/// yields rigorous two-sided bounds on the total intensity without any
/// scanning.
fn certified_rate_bounds(
    params: &HHParams,
    variant: Chr2Variant,
    kinds: &[SiteKind],
    u_max: f64,
    v_min: f64,
    v_max: f64,
) -> RateBounds {
    let states_of = |kind: SiteKind| -> Vec<u8> {
        match kind {
            SiteKind::Potassium => (codes::K_N0..=codes::K_N4).collect(),
            SiteKind::Sodium => (codes::NA_BASE..=codes::NA_M3H1).collect(),
            SiteKind::Channelrhodopsin => match variant {
                Chr2Variant::FourState => (codes::CHR2_C1..=codes::CHR2_C2).collect(),
                Chr2Variant::ThreeState => (codes::CHR2_C..=codes::CHR2_D).collect(),
            },
        }
    };
    // A throwaway model stub cannot be used here (bounds feed its
    // constructor), so edges are enumerated through a tiny local closure
    // mirroring `for_each_site_edge` at a fixed control level.
    let edge_sum = |kind: SiteKind, code: u8, v: f64, u: f64| -> f64 {
        let g = gating_rates(v);
        let fl = |r: f64| r.max(params.delta_floor);
        match kind {
            SiteKind::Potassium => {
                let n = code;
                let mut s = 0.0;
                if n < 4 {
                    s += (4 - n) as f64 * g.alpha_n;
                }
                if n > 0 {
                    s += n as f64 * g.beta_n;
                }
                s
            }
            SiteKind::Sodium => {
                let off = code - codes::NA_BASE;
                let (m, h) = (off % 4, off / 4);
                let mut s = 0.0;
                if m < 3 {
                    s += (3 - m) as f64 * g.alpha_m;
                }
                if m > 0 {
                    s += m as f64 * g.beta_m;
                }
                s += if h == 1 { g.beta_h } else { g.alpha_h };
                s
            }
            SiteKind::Channelrhodopsin => match (variant, code) {
                (Chr2Variant::FourState, codes::CHR2_C1) => fl(params.eps1 * u),
                (Chr2Variant::FourState, codes::CHR2_O1) => fl(params.kd1) + fl(params.e12),
                (Chr2Variant::FourState, codes::CHR2_O2) => fl(params.e21) + fl(params.kd2),
                (Chr2Variant::FourState, codes::CHR2_C2) => fl(params.eps2 * u) + fl(params.kr),
                (Chr2Variant::ThreeState, codes::CHR2_C) => fl(u),
                (Chr2Variant::ThreeState, codes::CHR2_O) => fl(params.kd1),
                (Chr2Variant::ThreeState, codes::CHR2_D) => fl(params.kr),
                _ => unreachable!("invalid light-state code"),
            },
        }
    };

    let mut lower = 0.0;
    let mut upper = 0.0;
    for &kind in kinds {
        let mut site_lo = f64::INFINITY;
        let mut site_hi = 0.0f64;
        for code in states_of(kind) {
            // Each summand is monotone in v, so per-edge extrema sit at the
            // endpoints; taking min/max of the endpoint sums per edge keeps
            // the bound rigorous. Light enters linearly: u = 0 minimises,
            // u = u_max maximises.
            let lo = edge_sum(kind, code, v_min, 0.0).min(edge_sum(kind, code, v_max, 0.0));
            let hi = edge_sum(kind, code, v_min, u_max).max(edge_sum(kind, code, v_max, u_max));
            site_lo = site_lo.min(lo);
            site_hi = site_hi.max(hi);
        }
        lower += site_lo;
        upper += site_hi;
    }
    // The per-state sum mixes increasing and decreasing rates, so the
    // endpoint minimum of the sum may slightly overstate the interior
    // minimum; shave a safe fraction rather than scan.
    RateBounds {
        lower: 0.5 * lower,
        upper,
    }
}

/// Certified growth constants.
///
/// Clamped site potentials make the drift globally bounded:
/// `‖f(v)‖ ≤ (1/N) Σ_i (ĝ_i ΔV̂_i + g_L ΔV̂_L,i) ‖ξ_i‖`, with no linear
/// term; the Lipschitz constant follows from the 1-Lipschitz clamp and
/// `|v_i - w_i| ≤ ‖ξ_i‖ ‖v - w‖`.
fn certified_growth(
    params: &HHParams,
    variant: Chr2Variant,
    kinds: &[SiteKind],
    mollifiers: &[Mollifier],
    v_min: f64,
    v_max: f64,
) -> GrowthConstants {
    let dv = |v_rev: f64| (v_rev - v_min).abs().max((v_rev - v_max).abs());
    let mut affine = 0.0;
    let mut lipschitz = 0.0;
    let inv_n = 1.0 / (kinds.len() as f64 + 1.0);
    for (&kind, xi) in kinds.iter().zip(mollifiers) {
        let (g_ch, v_rev) = match kind {
            SiteKind::Potassium => (params.g_k, params.v_k),
            SiteKind::Sodium => (params.g_na, params.v_na),
            SiteKind::Channelrhodopsin => {
                let g = match variant {
                    Chr2Variant::FourState => params.g_chr2 * params.rho.max(1.0),
                    Chr2Variant::ThreeState => params.g_chr2,
                };
                (g, params.v_chr2)
            }
        };
        let norm = xi.norm_h();
        let bound = g_ch * dv(v_rev) + params.g_leak * dv(params.v_leak);
        affine += inv_n * bound * norm;
        lipschitz += inv_n * (g_ch + params.g_leak) * norm * norm;
    }
    GrowthConstants {
        affine,
        linear: 0.0,
        lipschitz,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::trajectory_rng;
    use rand::Rng;

    fn small_model() -> HodgkinHuxleyModel {
        HodgkinHuxleyModel::new(4, 8, 1.0, Chr2Variant::FourState, HHParams::default()).unwrap()
    }

    #[test]
    fn gating_rates_are_positive_on_the_clamp_range() {
        for i in 0..=1000 {
            let v = -12.0 + 127.0 * i as f64 / 1000.0;
            let g = gating_rates(v);
            for r in [g.alpha_n, g.beta_n, g.alpha_m, g.beta_m, g.alpha_h, g.beta_h] {
                assert!(r > 0.0 && r.is_finite(), "rate {r} at v = {v}");
            }
        }
    }

    #[test]
    fn singular_points_are_smooth() {
        // The series branch must join the closed form smoothly around the
        // removable singularities at v = 10 (α_n) and v = 25 (α_m).
        for eps in [-1e-3, -1e-6, -1e-9, 0.0, 1e-9, 1e-6, 1e-3] {
            let n = gating_rates(10.0 + eps).alpha_n;
            assert!((n - 0.1).abs() < 1e-4, "α_n({}) = {n}", 10.0 + eps);
            let m = gating_rates(25.0 + eps).alpha_m;
            assert!((m - 1.0).abs() < 1e-3, "α_m({}) = {m}", 25.0 + eps);
        }
        // Inside the branch cut |x| < 1e-4 the series must reproduce the
        // closed form x / (eˣ - 1) to machine precision.
        let x = 0.99e-4;
        let series = gating_rates(10.0 - 10.0 * x).alpha_n;
        let closed = 0.1 * (x / x.exp_m1());
        assert!(
            (series - closed).abs() < 1e-14,
            "series {series} vs closed {closed}"
        );
    }

    #[test]
    fn rest_config_is_valid_and_dark_stable() {
        let model = small_model();
        let rest = model.rest_config();
        assert!(model.config_valid(&rest));
        // In darkness the closed light state only escapes at the floor.
        let dark = ControlMix::new(&[0.0], &[1.0]);
        let field = SpectralField::zeros(8);
        let mut edges = Vec::new();
        model.transitions(&rest, &field, dark, &mut edges);
        let light_edges: Vec<_> = edges
            .iter()
            .filter(|(cfg, _)| {
                cfg.0
                    .iter()
                    .zip(&rest.0)
                    .any(|(a, b)| a != b && *a >= codes::CHR2_C1)
            })
            .collect();
        for (_, rate) in &light_edges {
            assert!(
                (*rate - model.params().delta_floor).abs() < 1e-18,
                "dark light-edge rate {rate}"
            );
        }
    }

    #[test]
    fn transition_mass_matches_total_rate() {
        let model = small_model();
        let mut rng = trajectory_rng(21, 0);
        let mix_atoms = [0.0, 1.0];
        let mix_w = [0.5, 0.5];
        let mix = ControlMix::new(&mix_atoms, &mix_w);
        for _ in 0..50 {
            let coeffs: Vec<f64> = (0..8).map(|_| rng.random_range(-20.0..20.0)).collect();
            let field = SpectralField::new(coeffs);
            // A random valid configuration.
            let config = ChannelConfig(
                model
                    .site_kinds()
                    .iter()
                    .map(|&k| match k {
                        SiteKind::Potassium => rng.random_range(0..=4u8),
                        SiteKind::Sodium => codes::na(rng.random_range(0..4u8), rng.random_range(0..2u8)),
                        SiteKind::Channelrhodopsin => rng.random_range(codes::CHR2_C1..=codes::CHR2_C2),
                    })
                    .collect(),
            );
            let mut edges = Vec::new();
            model.transitions(&config, &field, mix, &mut edges);
            let total: f64 = edges.iter().map(|(_, r)| r).sum();
            let lam = model.jump_rate(&config, &field, mix);
            assert!((total - lam).abs() < 1e-12 * lam.max(1.0));
            // Exactly one site changes per edge, by exactly one state.
            for (cfg, _) in &edges {
                let diff = cfg.0.iter().zip(&config.0).filter(|(a, b)| a != b).count();
                assert_eq!(diff, 1);
            }
            // Intensities sit inside the certified bounds.
            let b = model.rate_bounds();
            assert!(lam >= b.lower && lam <= b.upper, "λ = {lam} vs {b:?}");
        }
    }

    #[test]
    fn only_conducting_states_drive_current() {
        let model = small_model();
        let field = SpectralField::zeros(8);
        let mix = ControlMix::new(&[0.0], &[1.0]);
        let mut out = vec![0.0; 8];

        // All closed: only leak currents remain.
        let rest = model.rest_config();
        model.reaction(&rest, &field, mix, &mut out);
        let leak_only = out.clone();

        // Open the sodium site: the reaction should change.
        let mut open = rest.clone();
        let na_site = model
            .site_kinds()
            .iter()
            .position(|&k| k == SiteKind::Sodium)
            .unwrap();
        open.0[na_site] = codes::NA_M3H1;
        model.reaction(&open, &field, mix, &mut out);
        let with_na = out.clone();
        let delta: f64 = with_na
            .iter()
            .zip(&leak_only)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        // At v = 0 the extra current is g_na * v_na / N paired through ξ.
        assert!(delta > 1.0, "sodium opening changed the drift by {delta}");
    }

    #[test]
    fn clamping_counts_events() {
        let model = small_model();
        model.reset_clamp_count();
        // A huge first coefficient drives site potentials far past v_max.
        let field = SpectralField::new(vec![1e4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let mix = ControlMix::new(&[0.0], &[1.0]);
        let _ = model.jump_rate(&model.rest_config(), &field, mix);
        assert!(model.clamp_count() > 0);
    }

    #[test]
    fn three_state_scheme_wires_its_own_codes() {
        let model =
            HodgkinHuxleyModel::new(4, 4, 1.0, Chr2Variant::ThreeState, HHParams::default())
                .unwrap();
        let rest = model.rest_config();
        assert!(model.config_valid(&rest));
        let lit_atoms = [1.0];
        let lit_w = [1.0];
        let mut edges = Vec::new();
        model.transitions(
            &rest,
            &SpectralField::zeros(4),
            ControlMix::new(&lit_atoms, &lit_w),
            &mut edges,
        );
        // The closed light state under full light escapes at rate u = 1.
        let chr_site = model
            .site_kinds()
            .iter()
            .position(|&k| k == SiteKind::Channelrhodopsin)
            .unwrap();
        let opening = edges
            .iter()
            .find(|(cfg, _)| cfg.0[chr_site] == codes::CHR2_O)
            .expect("an opening edge exists");
        assert!((opening.1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn growth_constants_bound_observed_drift() {
        let model = small_model();
        let g = model.growth();
        let mix = ControlMix::new(&[1.0], &[1.0]);
        let mut rng = trajectory_rng(33, 0);
        let mut out = vec![0.0; 8];
        for _ in 0..200 {
            let coeffs: Vec<f64> = (0..8).map(|_| rng.random_range(-50.0..50.0)).collect();
            let field = SpectralField::new(coeffs);
            let config = model.rest_config();
            model.reaction(&config, &field, mix, &mut out);
            let norm = out.iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!(
                norm <= g.affine + g.linear * field.norm_h() + 1e-9,
                "‖f‖ = {norm} exceeds {}",
                g.affine
            );
        }
    }
}
