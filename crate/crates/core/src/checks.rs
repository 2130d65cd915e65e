//! Built-in consistency checks, runnable from the command line.
//!
//! Each check re-derives a quantity through an independent route (closed
//! forms, frozen constants, probability identities) and compares it with
//! what the library computes. They are cheap enough to run before long
//! experiments and catch most wiring mistakes: broken quadrature weights,
//! mis-indexed transitions, non-reproducible parallelism.

use crate::flow::{flow_exact_elementary, flow_integrate, sample_jump_time};
use crate::mdp::bellman::{bellman_t, stage_eval};
use crate::mdp::bounding::bounding_build;
use crate::mdp::cost::{CostNorm, QuadraticCost};
use crate::mdp::grid::StateGrid;
use crate::mdp::montecarlo::monte_carlo_cost;
use crate::mdp::value_iteration::{value_iteration, SolverOptions};
use crate::models::elementary::{ElementaryModel, Polarity};
use crate::models::hh::gating_rates;
use crate::pdmp::{ConstantControl, JumpPoint};
use crate::rule::{enumerate_rules, RelaxedRule};
use crate::spectral::{mollifier_build, semigroup_apply, SpectralField};
use std::sync::Arc;

/// Result of one named check.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn pass(name: &'static str, detail: String) -> Self {
        Self {
            name,
            passed: true,
            detail,
        }
    }

    fn fail(name: &'static str, detail: String) -> Self {
        Self {
            name,
            passed: false,
            detail,
        }
    }

    fn from_bound(name: &'static str, value: f64, bound: f64) -> Self {
        let detail = format!("{value:.3e} (bound {bound:.3e})");
        if value.is_finite() && value <= bound {
            Self::pass(name, detail)
        } else {
            Self::fail(name, detail)
        }
    }
}

/// Run every check and collect the outcomes.
pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        check_semigroup(),
        check_flow_exactness(),
        check_hazard_inversion(),
        check_mollifier_mass(),
        check_gating_table(),
        check_kernel_mass(),
        check_survival_curve(),
        check_relaxation_dominance(),
        check_contraction(),
        check_reproducibility(),
    ]
}

/// Heat factors against `exp(-(kπ)²t)` computed right here.
fn check_semigroup() -> CheckOutcome {
    let v = SpectralField::new(vec![1.0, -0.5, 0.25]);
    let t = 0.07;
    let out = match semigroup_apply(&v, t) {
        Ok(out) => out,
        Err(e) => return CheckOutcome::fail("semigroup-factors", e.to_string()),
    };
    let mut worst = 0.0f64;
    for (k, (a, b)) in v.coeffs().iter().zip(out.coeffs()).enumerate() {
        let kpi = (k + 1) as f64 * std::f64::consts::PI;
        worst = worst.max((b - a * (-kpi * kpi * t).exp()).abs());
    }
    CheckOutcome::from_bound("semigroup-factors", worst, 1e-15)
}

/// Integrated benchmark flow against its closed form, across a segment
/// switch.
fn check_flow_exactness() -> CheckOutcome {
    let model = ElementaryModel::new(2, 1.0);
    let start = SpectralField::new(vec![0.8, -0.3]);
    let rule =
        RelaxedRule::new(vec![-1.0, 1.0], vec![vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
    let span = 0.6;
    let samples = match flow_integrate(&model, &Polarity::Plus, &start, &rule, span, 1e-3) {
        Ok(s) => s,
        Err(e) => return CheckOutcome::fail("flow-closed-form", e.to_string()),
    };
    let want = flow_exact_elementary(1.0, &start, &rule, span, span);
    let err = samples.fields.last().unwrap().distance(&want);
    CheckOutcome::from_bound("flow-closed-form", err, 1e-12)
}

/// Jump-time inversion at constant intensity, where times are explicit.
fn check_hazard_inversion() -> CheckOutcome {
    let model = ElementaryModel::new(1, 1.0);
    // At the origin the "+1" intensity is exactly 1/2 and the zero-control
    // flow keeps the field at the origin.
    let start = SpectralField::zeros(1);
    let rule = RelaxedRule::constant(0.0);
    let samples = match flow_integrate(&model, &Polarity::Plus, &start, &rule, 2.0, 1e-3) {
        Ok(s) => s,
        Err(e) => return CheckOutcome::fail("hazard-inversion", e.to_string()),
    };
    let mut worst = 0.0f64;
    for want in [0.123_456, 0.987_654, 1.765_432] {
        match sample_jump_time(&samples, 0.5 * want) {
            Some(got) => worst = worst.max((got - want).abs()),
            None => return CheckOutcome::fail("hazard-inversion", format!("lost t = {want}")),
        }
    }
    CheckOutcome::from_bound("hazard-inversion", worst, 5e-9)
}

/// Site mollifiers must carry unit mass and match their stated centre.
fn check_mollifier_mass() -> CheckOutcome {
    for (site, density) in [(1u32, 4u32), (3, 4), (5, 8)] {
        let m = match mollifier_build(site, density, 32) {
            Ok(m) => m,
            Err(e) => return CheckOutcome::fail("mollifier-mass", e.to_string()),
        };
        if (m.mass() - 1.0).abs() > 1e-8 {
            return CheckOutcome::fail(
                "mollifier-mass",
                format!("site {site}/{density}: mass {}", m.mass()),
            );
        }
    }
    CheckOutcome::pass("mollifier-mass", "unit mass at 3 sites".into())
}

/// Gating rates against values tabulated independently (and the removable
/// singularities against their exact limits).
fn check_gating_table() -> CheckOutcome {
    // (v, alpha_n, beta_n, alpha_m, beta_m, alpha_h, beta_h)
    let table = [
        (
            0.0,
            0.058_197_670_686_932_65,
            0.125,
            0.223_563_724_584_630_03,
            4.0,
            0.07,
            0.047_425_873_177_566_78,
        ),
        (
            10.0,
            0.1,
            0.110_312_112_823_074_43,
            0.430_825_375_183_302_4,
            2.295_013_682_949_731,
            0.042_457_146_179_884_345,
            0.119_202_922_022_117_55,
        ),
        (
            25.0,
            0.193_082_537_518_330_24,
            0.091_451_953_618_330_22,
            1.0,
            0.997_408_835_109_184_9,
            0.020_055_335_780_213_308,
            0.377_540_668_798_145_4,
        ),
    ];
    let mut worst = 0.0f64;
    for (v, an, bn, am, bm, ah, bh) in table {
        let g = gating_rates(v);
        for (got, want) in [
            (g.alpha_n, an),
            (g.beta_n, bn),
            (g.alpha_m, am),
            (g.beta_m, bm),
            (g.alpha_h, ah),
            (g.beta_h, bh),
        ] {
            worst = worst.max((got - want).abs());
        }
    }
    CheckOutcome::from_bound("gating-rate-table", worst, 1e-12)
}

/// Stage kernels must send total mass one to next points plus cemetery.
fn check_kernel_mass() -> CheckOutcome {
    let model = ElementaryModel::new(1, 1.0);
    let cost = QuadraticCost::tracking(1.0, SpectralField::zeros(1), CostNorm::H).unwrap();
    let rule =
        RelaxedRule::new(vec![-1.0, 1.0], vec![vec![0.3, 0.7], vec![1.0, 0.0]]).unwrap();
    let mut worst = 0.0f64;
    for (x, h) in [(0.5, 0.0), (-0.2, 0.4), (0.9, 0.9)] {
        let point = JumpPoint {
            field: SpectralField::new(vec![x]),
            mode: Polarity::Plus,
            h,
        };
        let eval = match stage_eval(&model, &cost, &point, &rule, 1.0, 5e-4) {
            Ok(e) => e,
            Err(e) => return CheckOutcome::fail("stage-kernel-mass", e.to_string()),
        };
        let mass: f64 = eval.kernel.iter().map(|(_, w)| w).sum();
        worst = worst.max((mass + eval.survival_end - 1.0).abs());
    }
    CheckOutcome::from_bound("stage-kernel-mass", worst, 1e-6)
}

/// Survival along a flow is a probability and decreases.
fn check_survival_curve() -> CheckOutcome {
    let model = ElementaryModel::new(1, 1.0);
    let start = SpectralField::new(vec![0.4]);
    let rule = RelaxedRule::constant(0.5);
    let samples = match flow_integrate(&model, &Polarity::Minus, &start, &rule, 1.5, 1e-3) {
        Ok(s) => s,
        Err(e) => return CheckOutcome::fail("survival-monotone", e.to_string()),
    };
    let chi: Vec<f64> = (0..samples.len()).map(|i| samples.survival(i)).collect();
    let in_range = chi.iter().all(|&c| (0.0..=1.0).contains(&c));
    let monotone = chi.windows(2).all(|w| w[1] <= w[0] + 1e-15);
    if in_range && monotone {
        CheckOutcome::pass(
            "survival-monotone",
            format!("end survival {:.6}", chi.last().unwrap()),
        )
    } else {
        CheckOutcome::fail("survival-monotone", "curve left [0,1] or increased".into())
    }
}

/// Minimizing over all lattice rules can only improve on minimizing over
/// their barycentre (ordinary) rules.
fn check_relaxation_dominance() -> CheckOutcome {
    let model = ElementaryModel::new(1, 1.0);
    let cost = QuadraticCost::new(
        50.0,
        SpectralField::new(vec![0.5]),
        0.2,
        0.0,
        0.0,
        50.0,
        0.0,
        CostNorm::H,
    )
    .unwrap();
    let rules = enumerate_rules(&[-1.0, 0.0, 1.0], 1, 4).unwrap();
    let diracs: Vec<RelaxedRule> = rules.iter().filter(|r| r.is_dirac()).cloned().collect();
    let mut worst = f64::NEG_INFINITY;
    for (x, h) in [(0.0, 0.0), (0.5, 0.3), (-0.4, 0.7)] {
        let point = JumpPoint {
            field: SpectralField::new(vec![x]),
            mode: Polarity::Plus,
            h,
        };
        let full = match bellman_t(&model, &cost, &point, &rules, 1.0, 1e-3, |p| {
            10.0 * (p.field.coeffs()[0] - 0.5).abs()
        }) {
            Ok((v, _)) => v,
            Err(e) => return CheckOutcome::fail("relaxation-dominance", e.to_string()),
        };
        let dirac_only = match bellman_t(&model, &cost, &point, &diracs, 1.0, 1e-3, |p| {
            10.0 * (p.field.coeffs()[0] - 0.5).abs()
        }) {
            Ok((v, _)) => v,
            Err(e) => return CheckOutcome::fail("relaxation-dominance", e.to_string()),
        };
        worst = worst.max(full - dirac_only);
    }
    CheckOutcome::from_bound("relaxation-dominance", worst, 1e-9)
}

/// A small solve must contract at least as fast as certified.
fn check_contraction() -> CheckOutcome {
    let model = ElementaryModel::new(1, 1.0);
    let cost = QuadraticCost::new(
        1.0,
        SpectralField::new(vec![0.5]),
        0.1,
        0.0,
        0.0,
        1.0,
        0.0,
        CostNorm::H,
    )
    .unwrap();
    let bounding = match bounding_build(&model, &cost, 1.0, 1.0) {
        Ok(b) => b,
        Err(e) => return CheckOutcome::fail("empirical-contraction", e.to_string()),
    };
    let grid = match StateGrid::for_model(&model, (-1.0, 1.0), 7, 5, 1.0) {
        Ok(g) => Arc::new(g),
        Err(e) => return CheckOutcome::fail("empirical-contraction", e.to_string()),
    };
    let rules = vec![RelaxedRule::constant(0.0), RelaxedRule::constant(0.5)];
    let opts = SolverOptions {
        dt: 2e-3,
        ..SolverOptions::default()
    };
    match value_iteration(&model, &cost, grid, &rules, &bounding, &opts) {
        Ok(sol) => {
            let worst = sol
                .diagnostics
                .contraction_ratios
                .iter()
                .zip(&sol.diagnostics.weighted_decrements)
                .filter(|(_, d)| **d > 1e-13)
                .map(|(r, _)| *r)
                .fold(0.0f64, f64::max);
            CheckOutcome::from_bound(
                "empirical-contraction",
                worst,
                sol.diagnostics.certified_contraction,
            )
        }
        Err(e) => CheckOutcome::fail("empirical-contraction", e.to_string()),
    }
}

/// Two identical Monte Carlo runs must agree bit for bit.
fn check_reproducibility() -> CheckOutcome {
    let model = ElementaryModel::new(1, 1.0);
    let cost = QuadraticCost::tracking(1.0, SpectralField::zeros(1), CostNorm::H).unwrap();
    let start = JumpPoint {
        field: SpectralField::new(vec![0.5]),
        mode: Polarity::Plus,
        h: 0.0,
    };
    let opts = crate::pdmp::SimOptions {
        dt: 1e-3,
        dense_stride: None,
    };
    let run = || {
        monte_carlo_cost(
            &model,
            &ConstantControl(0.3),
            &start,
            1.0,
            &cost,
            &opts,
            2024,
            64,
        )
    };
    match (run(), run()) {
        (Ok(a), Ok(b)) if a.mean == b.mean && a.std_err == b.std_err => {
            CheckOutcome::pass("mc-reproducibility", format!("mean {:.6}", a.mean))
        }
        (Ok(a), Ok(b)) => CheckOutcome::fail(
            "mc-reproducibility",
            format!("means {} vs {}", a.mean, b.mean),
        ),
        (Err(e), _) | (_, Err(e)) => CheckOutcome::fail("mc-reproducibility", e.to_string()),
    }
}
