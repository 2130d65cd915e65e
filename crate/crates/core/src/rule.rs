//! Relaxed control rules: piecewise-constant mixtures of control levels on
//! a stage of the process.
//!
//! A rule lives on the residual horizon of one inter-jump stage, rescaled
//! to `[0, 1]` and split into equal segments. On each segment it plays a
//! fixed convex mixture over a common set of control levels ("atoms").
//! Ordinary (non-relaxed) controls are the special case of one unit weight
//! per segment.

use crate::error::{CoreError, Result};
use crate::model::ControlMix;
use serde::{Deserialize, Serialize};

/// Weight-vector tolerance: rows must sum to one within this slack and are
/// then renormalised exactly.
const WEIGHT_SUM_TOL: f64 = 1e-9;

/// A piecewise-constant relaxed control rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxedRule {
    atoms: Vec<f64>,
    /// One row per time segment; `weights[s][j]` is the mass on atom `j`
    /// during segment `s`. Rows are non-negative and sum to one.
    weights: Vec<Vec<f64>>,
}

impl RelaxedRule {
    /// Build a rule from atoms and per-segment weight rows.
    pub fn new(atoms: Vec<f64>, weights: Vec<Vec<f64>>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(CoreError::InvalidInput(
                "a rule needs at least one control atom".into(),
            ));
        }
        if weights.is_empty() {
            return Err(CoreError::InvalidInput(
                "a rule needs at least one time segment".into(),
            ));
        }
        if atoms.iter().any(|u| !u.is_finite()) {
            return Err(CoreError::InvalidInput(
                "control atoms must be finite".into(),
            ));
        }
        let mut weights = weights;
        for row in &mut weights {
            if row.len() != atoms.len() {
                return Err(CoreError::InvalidInput(format!(
                    "weight row has {} entries for {} atoms",
                    row.len(),
                    atoms.len()
                )));
            }
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(CoreError::InvalidInput(
                    "weights must be finite and non-negative".into(),
                ));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(CoreError::InvalidInput(format!(
                    "weight row sums to {sum}, expected 1"
                )));
            }
            for w in row.iter_mut() {
                *w /= sum;
            }
        }
        Ok(Self { atoms, weights })
    }

    /// The rule that plays the single level `u` for the whole stage.
    pub fn constant(u: f64) -> Self {
        Self {
            atoms: vec![u],
            weights: vec![vec![1.0]],
        }
    }

    /// A rule that plays level `us[s]` (deterministically) on segment `s`.
    pub fn dirac_schedule(us: &[f64]) -> Self {
        let atoms = us.to_vec();
        let weights = (0..us.len())
            .map(|s| {
                let mut row = vec![0.0; us.len()];
                row[s] = 1.0;
                row
            })
            .collect();
        Self { atoms, weights }
    }

    /// Control levels shared by every segment.
    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// Number of equal time segments.
    pub fn segments(&self) -> usize {
        self.weights.len()
    }

    /// Weight row of segment `s`.
    pub fn row(&self, s: usize) -> &[f64] {
        &self.weights[s]
    }

    /// All weight rows.
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// Segment index active at the rescaled time `frac ∈ [0, 1]`.
    pub fn segment_at(&self, frac: f64) -> usize {
        let n = self.weights.len();
        let idx = (frac * n as f64).floor() as isize;
        idx.clamp(0, n as isize - 1) as usize
    }

    /// The instantaneous mixture active at rescaled time `frac`.
    pub fn mix_at(&self, frac: f64) -> ControlMix<'_> {
        self.mix_of(self.segment_at(frac))
    }

    /// The mixture of segment `s`.
    pub fn mix_of(&self, s: usize) -> ControlMix<'_> {
        ControlMix::new(&self.atoms, &self.weights[s])
    }

    /// Barycentre of segment `s`.
    pub fn mean_of(&self, s: usize) -> f64 {
        self.mix_of(s).mean()
    }

    /// Collapse each segment's mixture to its barycentre, yielding an
    /// ordinary (Dirac) rule with the same mean control path.
    pub fn barycenter(&self) -> RelaxedRule {
        let us: Vec<f64> = (0..self.segments()).map(|s| self.mean_of(s)).collect();
        RelaxedRule::dirac_schedule(&us)
    }

    /// True if every segment plays a single atom with full mass.
    pub fn is_dirac(&self) -> bool {
        self.weights
            .iter()
            .all(|row| row.iter().any(|w| (w - 1.0).abs() < 1e-12))
    }

    /// Largest |atom| referenced with positive weight.
    pub fn max_level(&self) -> f64 {
        let mut m: f64 = 0.0;
        for row in &self.weights {
            for (u, w) in self.atoms.iter().zip(row) {
                if *w > 0.0 {
                    m = m.max(u.abs());
                }
            }
        }
        m
    }
}

/// Enumerate every rule on `segments` equal segments whose per-segment
/// weights lie on the simplex lattice `{m/step : m ∈ ℕ, Σ m = step}` over
/// the given atoms.
///
/// The order is deterministic: lattice rows enumerate the integer
/// compositions with earlier atoms' masses descending first, and
/// multi-segment rules iterate the last segment fastest. Tie-breaking
/// "first enumerated wins" therefore has a stable meaning.
pub fn enumerate_rules(atoms: &[f64], segments: usize, step: usize) -> Result<Vec<RelaxedRule>> {
    if atoms.is_empty() || segments == 0 || step == 0 {
        return Err(CoreError::InvalidInput(
            "rule enumeration needs atoms, segments and a positive lattice step".into(),
        ));
    }
    let rows = simplex_lattice(atoms.len(), step);
    let mut rules = Vec::new();
    let mut idx = vec![0usize; segments];
    loop {
        let weights: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
        rules.push(RelaxedRule::new(atoms.to_vec(), weights)?);
        // Odometer increment, last segment fastest.
        let mut pos = segments;
        loop {
            if pos == 0 {
                return Ok(rules);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < rows.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// All compositions of `step` into `n_atoms` non-negative parts, mapped to
/// weight rows `m/step`, earlier atoms' masses descending first (so the
/// very first row puts all mass on the first atom).
fn simplex_lattice(n_atoms: usize, step: usize) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    let mut current = vec![0usize; n_atoms];
    compositions(step, 0, &mut current, &mut rows);
    rows
}

fn compositions(remaining: usize, pos: usize, current: &mut Vec<usize>, rows: &mut Vec<Vec<f64>>) {
    let n = current.len();
    if pos == n - 1 {
        current[pos] = remaining;
        let step: usize = current.iter().sum();
        rows.push(current.iter().map(|&m| m as f64 / step as f64).collect());
        return;
    }
    for m in (0..=remaining).rev() {
        current[pos] = m;
        compositions(remaining - m, pos + 1, current, rows);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_weight_rows() {
        assert!(RelaxedRule::new(vec![0.0], vec![vec![0.5]]).is_err());
        assert!(RelaxedRule::new(vec![0.0, 1.0], vec![vec![1.0]]).is_err());
        assert!(RelaxedRule::new(vec![0.0, 1.0], vec![vec![-0.1, 1.1]]).is_err());
        assert!(RelaxedRule::new(vec![], vec![vec![]]).is_err());
    }

    #[test]
    fn segment_lookup_covers_the_unit_interval() {
        let rule = RelaxedRule::dirac_schedule(&[0.0, 0.5, 1.0]);
        assert_eq!(rule.segment_at(0.0), 0);
        assert_eq!(rule.segment_at(0.34), 1);
        assert_eq!(rule.segment_at(0.99), 2);
        // The closed right endpoint belongs to the last segment.
        assert_eq!(rule.segment_at(1.0), 2);
    }

    #[test]
    fn barycenter_collapses_mixtures() {
        let rule =
            RelaxedRule::new(vec![-1.0, 1.0], vec![vec![0.25, 0.75], vec![1.0, 0.0]]).unwrap();
        let bary = rule.barycenter();
        assert!(bary.is_dirac());
        assert!((bary.mean_of(0) - 0.5).abs() < 1e-15);
        assert!((bary.mean_of(1) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn lattice_enumeration_counts_compositions() {
        // C(step + atoms - 1, atoms - 1) rows; 3 atoms at step 4 gives 15.
        let rules = enumerate_rules(&[-1.0, 0.0, 1.0], 1, 4).unwrap();
        assert_eq!(rules.len(), 15);
        // Two segments iterate the product space.
        let rules2 = enumerate_rules(&[-1.0, 0.0, 1.0], 2, 4).unwrap();
        assert_eq!(rules2.len(), 15 * 15);
        // Every row is a valid probability vector.
        for r in &rules {
            let s: f64 = r.row(0).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // Deterministic order: first rule puts all mass on the first atom.
        assert!((rules[0].row(0)[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dirac_levels_appear_in_the_lattice() {
        let rules = enumerate_rules(&[-1.0, 0.0, 1.0], 1, 4).unwrap();
        for target in [-1.0, 0.0, 1.0] {
            assert!(rules
                .iter()
                .any(|r| r.is_dirac() && (r.mean_of(0) - target).abs() < 1e-15));
        }
    }
}
