//! Interpolation grids over jump points, and the value/policy tables the
//! solver produces.
//!
//! A grid is the product of uniform coefficient axes (one per retained
//! field mode), a uniform axis for the jump time `h ∈ [0, horizon]`, and
//! the finite mode set. Values interpolate multilinearly in the
//! coefficients and linearly in `h`; modes are matched exactly. Queries
//! outside the coefficient box are clamped onto it and counted, so a run
//! can report whether its grid was large enough after the fact.

use crate::error::{CoreError, Result};
use crate::model::EnumerableModes;
use crate::pdmp::{JumpPoint, Strategy};
use crate::rule::RelaxedRule;
use crate::spectral::SpectralField;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// One uniform coefficient axis.
#[derive(Clone, Copy, Debug)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub nodes: usize,
}

impl Axis {
    fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min >= self.max {
            return Err(CoreError::Config(format!(
                "axis range [{}, {}] is not a proper interval",
                self.min, self.max
            )));
        }
        if self.nodes < 2 {
            return Err(CoreError::Config(
                "each coefficient axis needs at least two nodes".into(),
            ));
        }
        Ok(())
    }

    fn step(&self) -> f64 {
        (self.max - self.min) / (self.nodes - 1) as f64
    }

    fn value(&self, i: usize) -> f64 {
        self.min + self.step() * i as f64
    }
}

/// The interpolation grid.
#[derive(Debug)]
pub struct StateGrid<Mode> {
    axes: Vec<Axis>,
    h_nodes: usize,
    horizon: f64,
    modes: Vec<Mode>,
    clamp_events: AtomicU64,
}

impl<Mode: Clone + PartialEq> StateGrid<Mode> {
    /// Build a grid; `modes` fixes the mode ordering used by node indices.
    pub fn new(axes: Vec<Axis>, h_nodes: usize, horizon: f64, modes: Vec<Mode>) -> Result<Self> {
        if axes.is_empty() {
            return Err(CoreError::Config("the grid needs at least one axis".into()));
        }
        for a in &axes {
            a.validate()?;
        }
        if h_nodes < 2 {
            return Err(CoreError::Config("need at least two jump-time nodes".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(CoreError::Config(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if modes.is_empty() {
            return Err(CoreError::Config("the grid needs at least one mode".into()));
        }
        Ok(Self {
            axes,
            h_nodes,
            horizon,
            modes,
            clamp_events: AtomicU64::new(0),
        })
    }

    /// Coefficient axes.
    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    /// Number of jump-time nodes.
    pub fn h_nodes(&self) -> usize {
        self.h_nodes
    }

    /// The horizon.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// The mode ordering.
    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    /// Nodes per mode-and-time slice.
    fn coeff_count(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }

    /// Total number of grid nodes.
    pub fn node_count(&self) -> usize {
        self.modes.len() * self.h_nodes * self.coeff_count()
    }

    /// Jump-time value of node layer `j`.
    pub fn h_value(&self, j: usize) -> f64 {
        self.horizon * j as f64 / (self.h_nodes - 1) as f64
    }

    /// How often an interpolation query fell outside the coefficient box.
    pub fn clamp_count(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }

    /// The jump point sitting at a node index.
    pub fn node_point(&self, idx: usize) -> JumpPoint<Mode> {
        let cc = self.coeff_count();
        let (block, mut rem) = (idx / cc, idx % cc);
        let mode_idx = block / self.h_nodes;
        let h_idx = block % self.h_nodes;
        let mut coeffs = vec![0.0; self.axes.len()];
        for (i, a) in self.axes.iter().enumerate().rev() {
            coeffs[i] = a.value(rem % a.nodes);
            rem /= a.nodes;
        }
        JumpPoint {
            field: SpectralField::new(coeffs),
            mode: self.modes[mode_idx].clone(),
            h: self.h_value(h_idx),
        }
    }

    fn mode_index(&self, mode: &Mode) -> Result<usize> {
        self.modes
            .iter()
            .position(|m| m == mode)
            .ok_or_else(|| CoreError::InvalidInput("mode not present in the grid".into()))
    }

    /// Locate a coordinate on an axis: cell index, interpolation fraction,
    /// and whether clamping occurred.
    fn locate(x: f64, min: f64, step: f64, nodes: usize) -> (usize, f64, bool) {
        let u = (x - min) / step;
        let clamped = u < -1e-12 || u > (nodes - 1) as f64 + 1e-12;
        let u = u.clamp(0.0, (nodes - 1) as f64);
        let cell = (u.floor() as usize).min(nodes - 2);
        (cell, u - cell as f64, clamped)
    }

    /// Interpolation stencil for an arbitrary jump point: node indices and
    /// convex weights (they sum to one). Out-of-box coefficients are
    /// clamped and counted.
    pub fn stencil(
        &self,
        field: &SpectralField,
        mode: &Mode,
        h: f64,
        out: &mut Vec<(usize, f64)>,
    ) -> Result<()> {
        out.clear();
        if field.dim() != self.axes.len() {
            return Err(CoreError::InvalidInput(format!(
                "field has {} coefficients, grid has {} axes",
                field.dim(),
                self.axes.len()
            )));
        }
        let mode_idx = self.mode_index(mode)?;
        let mut clamped = false;

        let h_step = self.horizon / (self.h_nodes - 1) as f64;
        let (h_cell, h_frac, h_cl) = Self::locate(h, 0.0, h_step, self.h_nodes);
        clamped |= h_cl;

        // Per-axis cells and fractions.
        let mut cells = Vec::with_capacity(self.axes.len());
        for (a, &x) in self.axes.iter().zip(field.coeffs()) {
            let (cell, frac, cl) = Self::locate(x, a.min, a.step(), a.nodes);
            clamped |= cl;
            cells.push((cell, frac));
        }
        if clamped {
            self.clamp_events.fetch_add(1, Ordering::Relaxed);
        }

        // Odometer over the 2^(axes+1) corners (h axis last).
        let n_axes = self.axes.len();
        let corners = 1usize << (n_axes + 1);
        let cc = self.coeff_count();
        for corner in 0..corners {
            let mut weight = 1.0;
            let mut flat = 0usize;
            for (i, a) in self.axes.iter().enumerate() {
                let hi = (corner >> i) & 1 == 1;
                let (cell, frac) = cells[i];
                weight *= if hi { frac } else { 1.0 - frac };
                flat = flat * a.nodes + cell + hi as usize;
            }
            let h_hi = (corner >> n_axes) & 1 == 1;
            weight *= if h_hi { h_frac } else { 1.0 - h_frac };
            if weight == 0.0 {
                continue;
            }
            let h_idx = h_cell + h_hi as usize;
            out.push(((mode_idx * self.h_nodes + h_idx) * cc + flat, weight));
        }
        Ok(())
    }

    /// Index of the grid node nearest to a jump point (modes exact).
    pub fn nearest_node(&self, field: &SpectralField, mode: &Mode, h: f64) -> Result<usize> {
        let mode_idx = self.mode_index(mode)?;
        let h_step = self.horizon / (self.h_nodes - 1) as f64;
        let h_idx = ((h / h_step).round().max(0.0) as usize).min(self.h_nodes - 1);
        let mut flat = 0usize;
        for (a, &x) in self.axes.iter().zip(field.coeffs()) {
            let i = (((x - a.min) / a.step()).round().max(0.0) as usize).min(a.nodes - 1);
            flat = flat * a.nodes + i;
        }
        Ok((mode_idx * self.h_nodes + h_idx) * self.coeff_count() + flat)
    }

    /// Grid for a model: one axis per retained mode (shared coefficient
    /// range), the model's enumerated modes.
    pub fn for_model<M>(
        model: &M,
        coeff_range: (f64, f64),
        nodes_per_axis: usize,
        h_nodes: usize,
        horizon: f64,
    ) -> Result<Self>
    where
        M: EnumerableModes<Mode = Mode>,
    {
        let axes = vec![
            Axis {
                min: coeff_range.0,
                max: coeff_range.1,
                nodes: nodes_per_axis,
            };
            model.dim()
        ];
        Self::new(axes, h_nodes, horizon, model.enumerate_modes())
    }
}

/// Values attached to every grid node.
#[derive(Clone, Debug)]
pub struct ValueTable<Mode> {
    grid: Arc<StateGrid<Mode>>,
    values: Vec<f64>,
}

impl<Mode: Clone + PartialEq> ValueTable<Mode> {
    /// The all-zero table.
    pub fn zeros(grid: Arc<StateGrid<Mode>>) -> Self {
        let n = grid.node_count();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    /// A table holding `value` everywhere.
    pub fn constant(grid: Arc<StateGrid<Mode>>, value: f64) -> Self {
        let n = grid.node_count();
        Self {
            grid,
            values: vec![value; n],
        }
    }

    /// Wrap precomputed node values.
    pub fn from_values(grid: Arc<StateGrid<Mode>>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(CoreError::Config(format!(
                "{} values for {} grid nodes",
                values.len(),
                grid.node_count()
            )));
        }
        Ok(Self { grid, values })
    }

    /// The underlying grid.
    pub fn grid(&self) -> &Arc<StateGrid<Mode>> {
        &self.grid
    }

    /// Raw node values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable node values.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Interpolated value at an arbitrary jump point.
    pub fn evaluate(&self, field: &SpectralField, mode: &Mode, h: f64) -> Result<f64> {
        let mut stencil = Vec::with_capacity(16);
        self.grid.stencil(field, mode, h, &mut stencil)?;
        Ok(stencil.iter().map(|&(i, w)| w * self.values[i]).sum())
    }
}

/// A relaxed rule attached to every grid node.
#[derive(Clone, Debug)]
pub struct PolicyTable<Mode> {
    grid: Arc<StateGrid<Mode>>,
    /// Index into `rules` per grid node.
    choices: Vec<usize>,
    rules: Vec<RelaxedRule>,
}

impl<Mode: Clone + PartialEq> PolicyTable<Mode> {
    /// Wrap per-node choices over a shared rule family.
    pub fn new(
        grid: Arc<StateGrid<Mode>>,
        choices: Vec<usize>,
        rules: Vec<RelaxedRule>,
    ) -> Result<Self> {
        if choices.len() != grid.node_count() {
            return Err(CoreError::Config(format!(
                "{} choices for {} grid nodes",
                choices.len(),
                grid.node_count()
            )));
        }
        if choices.iter().any(|&c| c >= rules.len()) {
            return Err(CoreError::Config("policy references a missing rule".into()));
        }
        Ok(Self {
            grid,
            choices,
            rules,
        })
    }

    /// The underlying grid.
    pub fn grid(&self) -> &Arc<StateGrid<Mode>> {
        &self.grid
    }

    /// The shared rule family.
    pub fn rules(&self) -> &[RelaxedRule] {
        &self.rules
    }

    /// Per-node rule indices.
    pub fn choices(&self) -> &[usize] {
        &self.choices
    }

    /// The rule at the node nearest to a jump point.
    pub fn rule_for(&self, field: &SpectralField, mode: &Mode, h: f64) -> Result<&RelaxedRule> {
        let idx = self.grid.nearest_node(field, mode, h)?;
        Ok(&self.rules[self.choices[idx]])
    }
}

/// Plays a [`PolicyTable`] as a simulation strategy (nearest-node lookup).
pub struct PolicyStrategy<Mode>(pub Arc<PolicyTable<Mode>>);

impl<Mode: Clone + PartialEq + Send + Sync> Strategy<Mode> for PolicyStrategy<Mode> {
    fn rule_at(&self, point: &JumpPoint<Mode>, _residual: f64) -> RelaxedRule {
        self.0
            .rule_for(&point.field, &point.mode, point.h)
            .cloned()
            .unwrap_or_else(|_| RelaxedRule::constant(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::elementary::Polarity;

    fn demo_grid() -> Arc<StateGrid<Polarity>> {
        Arc::new(
            StateGrid::new(
                vec![Axis {
                    min: -1.0,
                    max: 1.0,
                    nodes: 5,
                }],
                3,
                1.0,
                vec![Polarity::Plus, Polarity::Minus],
            )
            .unwrap(),
        )
    }

    #[test]
    fn node_round_trip() {
        let grid = demo_grid();
        for idx in 0..grid.node_count() {
            let p = grid.node_point(idx);
            let back = grid.nearest_node(&p.field, &p.mode, p.h).unwrap();
            assert_eq!(idx, back);
        }
    }

    #[test]
    fn stencil_weights_are_convex() {
        let grid = demo_grid();
        let mut stencil = Vec::new();
        let field = SpectralField::new(vec![0.3]);
        grid.stencil(&field, &Polarity::Plus, 0.7, &mut stencil).unwrap();
        let total: f64 = stencil.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(stencil.iter().all(|&(_, w)| w > 0.0));
        assert_eq!(stencil.len(), 4); // 2 corners × 2 time layers
    }

    #[test]
    fn interpolation_reproduces_linear_functions() {
        let grid = demo_grid();
        // Fill the table with a function linear in (x, h) per mode.
        let mut table = ValueTable::zeros(grid.clone());
        for idx in 0..grid.node_count() {
            let p = grid.node_point(idx);
            let sign = if p.mode == Polarity::Plus { 1.0 } else { -2.0 };
            table.values_mut()[idx] = sign * (3.0 * p.field.coeffs()[0] + 0.5 * p.h + 1.0);
        }
        let field = SpectralField::new(vec![0.37]);
        let got = table.evaluate(&field, &Polarity::Plus, 0.21).unwrap();
        assert!((got - (3.0 * 0.37 + 0.5 * 0.21 + 1.0)).abs() < 1e-12);
        let got = table.evaluate(&field, &Polarity::Minus, 0.21).unwrap();
        assert!((got + 2.0 * (3.0 * 0.37 + 0.5 * 0.21 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn out_of_box_queries_clamp_and_count() {
        let grid = demo_grid();
        let table = ValueTable::constant(grid.clone(), 4.0);
        let before = grid.clamp_count();
        let field = SpectralField::new(vec![2.5]);
        let got = table.evaluate(&field, &Polarity::Plus, 0.5).unwrap();
        assert!((got - 4.0).abs() < 1e-12);
        assert_eq!(grid.clamp_count(), before + 1);
    }

    #[test]
    fn unknown_modes_are_rejected() {
        let grid = Arc::new(
            StateGrid::new(
                vec![Axis {
                    min: 0.0,
                    max: 1.0,
                    nodes: 2,
                }],
                2,
                1.0,
                vec![Polarity::Plus],
            )
            .unwrap(),
        );
        let table = ValueTable::zeros(grid);
        let field = SpectralField::new(vec![0.5]);
        assert!(table.evaluate(&field, &Polarity::Minus, 0.5).is_err());
    }
}
