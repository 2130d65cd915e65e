//! Shared fixtures for the criterion benchmarks.

use pdmp_core::mdp::{CostNorm, QuadraticCost};
use pdmp_core::models::elementary::{ElementaryModel, Polarity};
use pdmp_core::{JumpPoint, SpectralField};

/// The benchmark model sized for timing runs.
pub fn bench_model(dim: usize) -> ElementaryModel {
    ElementaryModel::new(dim, 1.0)
}

/// A generic non-trivial starting point.
pub fn bench_start(dim: usize) -> JumpPoint<Polarity> {
    JumpPoint {
        field: SpectralField::new((0..dim).map(|k| 0.5 / (k + 1) as f64).collect()),
        mode: Polarity::Plus,
        h: 0.0,
    }
}

/// A tracking cost with control penalty.
pub fn bench_cost(dim: usize) -> QuadraticCost {
    let mut reference = vec![0.0; dim];
    reference[0] = 0.5;
    QuadraticCost::new(
        10.0,
        SpectralField::new(reference),
        0.1,
        0.0,
        0.0,
        10.0,
        0.0,
        CostNorm::H,
    )
    .expect("valid cost")
}
