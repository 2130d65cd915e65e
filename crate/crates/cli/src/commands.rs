//! The four subcommands: simulate, solve, evaluate, verify.

use crate::artifacts;
use crate::config::{self, BuiltModel, LoadedConfig, Provenance, ResolvedRun, StrategySpec};
use crate::{CliError, RunArgs, VerifyArgs};
use pdmp_core::checks;
use pdmp_core::mdp::{
    bounding_build, mdp_chain_cost, monte_carlo_cost, value_iteration, McEstimate, QuadraticCost,
};
use pdmp_core::models::elementary::Polarity;
use pdmp_core::models::hh::{ChannelConfig, HodgkinHuxleyModel};
use pdmp_core::pdmp::{ConstantControl, FixedRule};
use pdmp_core::rng::trajectory_rng;
use pdmp_core::{
    field_pairing, mollifier_build, simulate, JumpPoint, Model, Mollifier, RelaxedRule,
    SimOptions, Strategy, Trajectory,
};
use rayon::prelude::*;
use serde::Serialize;
use std::path::{Path, PathBuf};

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out.display())))
}

/// Pick the output directory: the `--out` flag wins, then the run block's
/// `out_dir`, then `out`.
fn resolve_out_dir(
    flag: &Option<PathBuf>,
    loaded: &LoadedConfig,
    prov: &mut Provenance,
) -> PathBuf {
    let configured = loaded.config.run.as_ref().and_then(|r| r.out_dir.clone());
    let chosen = flag.clone().or(configured);
    config::mark(prov, "run.out_dir", chosen.is_some());
    chosen.unwrap_or_else(|| PathBuf::from("out"))
}

/// Build the strategy for the benchmark model; solved policy tables are
/// supported here.
fn elementary_strategy(
    loaded: &LoadedConfig,
    prov: &mut Provenance,
) -> Result<Box<dyn Strategy<Polarity>>, CliError> {
    let spec = loaded.config.run.as_ref().and_then(|r| r.strategy.as_ref());
    prov.insert(
        "run.strategy".into(),
        if spec.is_some() {
            config::USER
        } else {
            config::DEFAULT
        },
    );
    match spec {
        None => Ok(Box::new(ConstantControl(0.0))),
        Some(StrategySpec::Constant(u)) => Ok(Box::new(ConstantControl(*u))),
        Some(StrategySpec::Rule(rule)) => Ok(Box::new(FixedRule(RelaxedRule::new(
            rule.atoms.clone(),
            rule.weights.clone(),
        )?))),
        Some(StrategySpec::Policy(path)) => Ok(Box::new(artifacts::load_policy(
            &loaded.resolve_path(path),
        )?)),
    }
}

/// Build the strategy for the cable model (no policy tables: the grid
/// solver does not cover its configuration space).
fn cable_strategy(
    loaded: &LoadedConfig,
    prov: &mut Provenance,
) -> Result<Box<dyn Strategy<ChannelConfig>>, CliError> {
    let spec = loaded.config.run.as_ref().and_then(|r| r.strategy.as_ref());
    prov.insert(
        "run.strategy".into(),
        if spec.is_some() {
            config::USER
        } else {
            config::DEFAULT
        },
    );
    match spec {
        None => Ok(Box::new(ConstantControl(0.0))),
        Some(StrategySpec::Constant(u)) => Ok(Box::new(ConstantControl(*u))),
        Some(StrategySpec::Rule(rule)) => Ok(Box::new(FixedRule(RelaxedRule::new(
            rule.atoms.clone(),
            rule.weights.clone(),
        )?))),
        Some(StrategySpec::Policy(_)) => Err(CliError::Config(
            "policy strategies need the benchmark model (model kind \"elementary\")".into(),
        )),
    }
}

/// Sample `n_traj` trajectories on their per-index random streams.
fn sample_batch<M: Model>(
    model: &M,
    strategy: &dyn Strategy<M::Mode>,
    start: &JumpPoint<M::Mode>,
    run: &ResolvedRun,
    cost: Option<&QuadraticCost>,
    dense: bool,
) -> Result<Vec<Trajectory<M::Mode>>, CliError> {
    let opts = SimOptions {
        dt: run.dt,
        dense_stride: dense.then_some(run.dense_stride),
    };
    (0..run.n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(run.seed, i);
            simulate(model, strategy, start, run.horizon, &opts, cost, &mut rng)
                .map_err(CliError::from)
        })
        .collect()
}

/// Write the dense and jump-chain CSVs of every trajectory.
fn write_batch<M: Model>(
    model: &M,
    trajectories: &[Trajectory<M::Mode>],
    out: &Path,
) -> Result<(), CliError> {
    for (i, traj) in trajectories.iter().enumerate() {
        artifacts::write_dense_csv(model, traj, &out.join(format!("trajectory_{i:04}.csv")))?;
        artifacts::write_chain_csv(model, traj, &out.join(format!("path_{i:04}.csv")))?;
    }
    Ok(())
}

struct BatchSummary {
    jump_counts: Vec<usize>,
    absorbed: Vec<bool>,
    costs: Option<Vec<f64>>,
}

fn summarize<Mode>(trajectories: &[Trajectory<Mode>]) -> BatchSummary {
    BatchSummary {
        jump_counts: trajectories.iter().map(|t| t.jumps.len()).collect(),
        absorbed: trajectories.iter().map(|t| t.absorbed).collect(),
        costs: trajectories
            .iter()
            .map(|t| t.cost)
            .collect::<Option<Vec<f64>>>(),
    }
}

/// Raw (unclamped) mollified potential envelope over all dense samples
/// and sites, for the run report.
fn voltage_envelope(
    model: &HodgkinHuxleyModel,
    trajectories: &[Trajectory<ChannelConfig>],
) -> Result<(f64, f64), CliError> {
    let probes: Vec<Mollifier> = (1..model.density())
        .map(|site| mollifier_build(site, model.density(), model.dim()))
        .collect::<Result<_, _>>()?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for traj in trajectories {
        let dense = traj
            .dense
            .as_ref()
            .expect("simulation ran with dense recording enabled");
        for field in &dense.fields {
            for probe in &probes {
                let v = field_pairing(probe, field);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    Ok((lo, hi))
}

#[derive(Serialize)]
struct SimulateMetadata<'a> {
    command: &'static str,
    crate_version: &'static str,
    config_sha256: &'a str,
    master_seed: u64,
    model: &'static str,
    n_trajectories: usize,
    horizon: f64,
    dt: f64,
    dense_stride: usize,
    start_coeffs: Vec<f64>,
    start_mode: String,
    jump_counts: Vec<usize>,
    absorbed: Vec<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    costs: Option<Vec<f64>>,
    /// Observed raw potential envelope across sites (cable model only).
    #[serde(skip_serializing_if = "Option::is_none")]
    voltage_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    voltage_max: Option<f64>,
    /// The clamp band rate evaluations are confined to.
    #[serde(skip_serializing_if = "Option::is_none")]
    voltage_band: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    clamp_events: Option<u64>,
    provenance: &'a Provenance,
}

pub fn simulate_cmd(args: &RunArgs) -> Result<(), CliError> {
    let loaded = config::load(&args.config)?;
    let mut prov = Provenance::new();
    let model = config::build_model(&loaded.config, &mut prov)?;
    let run = config::build_run(&loaded.config, args.seed, 1, &mut prov)?;
    let cost = config::build_cost(&loaded, model.dim(), &mut prov)?;
    let out = resolve_out_dir(&args.out, &loaded, &mut prov);
    ensure_out_dir(&out)?;

    let (summary, start_coeffs, start_mode, voltage, clamps) = match &model {
        BuiltModel::Elementary(m) => {
            let start = config::elementary_start(&loaded.config, m.dim(), &mut prov)?;
            let strategy = elementary_strategy(&loaded, &mut prov)?;
            let trajs = sample_batch(m, strategy.as_ref(), &start, &run, cost.as_ref(), true)?;
            write_batch(m, &trajs, &out)?;
            (
                summarize(&trajs),
                start.field.coeffs().to_vec(),
                m.mode_label(&start.mode),
                None,
                None,
            )
        }
        BuiltModel::Cable(m) => {
            let m = m.as_ref();
            let start = config::cable_start(&loaded.config, m, &mut prov)?;
            let strategy = cable_strategy(&loaded, &mut prov)?;
            let trajs = sample_batch(m, strategy.as_ref(), &start, &run, cost.as_ref(), true)?;
            write_batch(m, &trajs, &out)?;
            let envelope = voltage_envelope(m, &trajs)?;
            (
                summarize(&trajs),
                start.field.coeffs().to_vec(),
                m.mode_label(&start.mode),
                Some(envelope),
                Some(m.clamp_count()),
            )
        }
    };

    let metadata = SimulateMetadata {
        command: "simulate",
        crate_version: VERSION,
        config_sha256: &loaded.sha256,
        master_seed: run.seed,
        model: model.kind(),
        n_trajectories: run.n_traj,
        horizon: run.horizon,
        dt: run.dt,
        dense_stride: run.dense_stride,
        start_coeffs,
        start_mode,
        jump_counts: summary.jump_counts,
        absorbed: summary.absorbed,
        costs: summary.costs,
        voltage_min: voltage.map(|(lo, _)| lo),
        voltage_max: voltage.map(|(_, hi)| hi),
        voltage_band: match &model {
            BuiltModel::Cable(m) => {
                let (lo, hi) = m.voltage_range();
                Some([lo, hi])
            }
            BuiltModel::Elementary(_) => None,
        },
        clamp_events: clamps,
        provenance: &prov,
    };
    artifacts::write_json(&out.join("metadata.json"), &metadata)?;

    let jumps_lo = metadata.jump_counts.iter().min().copied().unwrap_or(0);
    let jumps_hi = metadata.jump_counts.iter().max().copied().unwrap_or(0);
    println!(
        "simulate: wrote {} {} to {} (jumps {jumps_lo}..{jumps_hi})",
        run.n_traj,
        if run.n_traj == 1 {
            "trajectory"
        } else {
            "trajectories"
        },
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SolveReport<'a> {
    command: &'static str,
    crate_version: &'static str,
    config_sha256: &'a str,
    master_seed: u64,
    grid_nodes: usize,
    rule_count: usize,
    /// Certified contraction factor of the weighted Bellman operator.
    contraction: f64,
    /// The same factor recomputed from its certificate ingredients.
    contraction_recomputed: f64,
    c_phi: f64,
    zeta: f64,
    delta: f64,
    m2: f64,
    m3: f64,
    rate_upper: f64,
    stage_gain: f64,
    horizon: f64,
    iterations: usize,
    weighted_target: f64,
    weighted_decrements: &'a [f64],
    sup_decrements: &'a [f64],
    contraction_ratios: &'a [f64],
    /// Post-jump interpolation queries that fell outside the grid box.
    interpolation_clamps: u64,
    provenance: &'a Provenance,
}

pub fn solve_cmd(args: &RunArgs) -> Result<(), CliError> {
    let loaded = config::load(&args.config)?;
    let mut prov = Provenance::new();
    let model = config::build_model(&loaded.config, &mut prov)?;
    let BuiltModel::Elementary(model) = model else {
        return Err(CliError::Config(
            "solve needs the benchmark model (model kind \"elementary\")".into(),
        ));
    };
    let run = config::build_run(&loaded.config, args.seed, 1, &mut prov)?;
    let cost = config::build_cost(&loaded, model.dim(), &mut prov)?
        .ok_or_else(|| CliError::Config("solve needs a \"cost\" block".into()))?;
    let solver = config::build_solver(&loaded.config, &model, run.horizon, &mut prov)?;
    let out = resolve_out_dir(&args.out, &loaded, &mut prov);
    ensure_out_dir(&out)?;

    let bounding = bounding_build(&model, &cost, solver.m2, run.horizon)?;
    let solution = value_iteration(
        &model,
        &cost,
        solver.grid.clone(),
        &solver.rules,
        &bounding,
        &solver.options,
    )?;

    artifacts::write_json(
        &out.join("value.json"),
        &artifacts::value_file(&model, &solution.values, &loaded.sha256, run.seed),
    )?;
    artifacts::write_json(
        &out.join("policy.json"),
        &artifacts::policy_file(&model, &solution.policy, &loaded.sha256, run.seed),
    )?;

    let diag = &solution.diagnostics;
    let report = SolveReport {
        command: "solve",
        crate_version: VERSION,
        config_sha256: &loaded.sha256,
        master_seed: run.seed,
        grid_nodes: solver.grid.node_count(),
        rule_count: solver.rules.len(),
        contraction: bounding.contraction,
        contraction_recomputed: bounding.c_phi * bounding.rate_upper
            / (bounding.zeta + bounding.delta),
        c_phi: bounding.c_phi,
        zeta: bounding.zeta,
        delta: bounding.delta,
        m2: bounding.m2,
        m3: bounding.m3,
        rate_upper: bounding.rate_upper,
        stage_gain: bounding.stage_gain,
        horizon: bounding.horizon,
        iterations: diag.iterations,
        weighted_target: diag.weighted_target,
        weighted_decrements: &diag.weighted_decrements,
        sup_decrements: &diag.sup_decrements,
        contraction_ratios: &diag.contraction_ratios,
        interpolation_clamps: solver.grid.clamp_count(),
        provenance: &prov,
    };
    artifacts::write_json(&out.join("report.json"), &report)?;

    println!(
        "solve: {} nodes x {} rules converged in {} sweeps (contraction {:.3}, final weighted decrement {:.3e})",
        report.grid_nodes,
        report.rule_count,
        diag.iterations,
        bounding.contraction,
        diag.weighted_decrements.last().copied().unwrap_or(0.0),
    );
    Ok(())
}

#[derive(Serialize)]
struct EvaluationReport<'a> {
    command: &'static str,
    crate_version: &'static str,
    config_sha256: &'a str,
    master_seed: u64,
    chain_seed: u64,
    model: &'static str,
    n_trajectories: usize,
    horizon: f64,
    dt: f64,
    pathwise_mean: f64,
    pathwise_std_err: f64,
    chain_mean: f64,
    chain_std_err: f64,
    gap: f64,
    tolerance: f64,
    equivalent: bool,
    provenance: &'a Provenance,
}

/// Pathwise and embedded-chain cost estimates on independent seed groups.
fn estimate_pair<M: Model>(
    model: &M,
    strategy: &dyn Strategy<M::Mode>,
    start: &JumpPoint<M::Mode>,
    run: &ResolvedRun,
    cost: &QuadraticCost,
) -> Result<(McEstimate, McEstimate), CliError> {
    let opts = SimOptions {
        dt: run.dt,
        dense_stride: None,
    };
    let pathwise = monte_carlo_cost(
        model,
        strategy,
        start,
        run.horizon,
        cost,
        &opts,
        run.seed,
        run.n_traj,
    )?;
    let chain = mdp_chain_cost(
        model,
        strategy,
        start,
        run.horizon,
        cost,
        &opts,
        run.seed.wrapping_add(1),
        run.n_traj,
    )?;
    Ok((pathwise, chain))
}

pub fn evaluate_cmd(args: &RunArgs) -> Result<(), CliError> {
    let loaded = config::load(&args.config)?;
    let mut prov = Provenance::new();
    let model = config::build_model(&loaded.config, &mut prov)?;
    let run = config::build_run(&loaded.config, args.seed, 1000, &mut prov)?;
    let cost = config::build_cost(&loaded, model.dim(), &mut prov)?
        .ok_or_else(|| CliError::Config("evaluate needs a \"cost\" block".into()))?;
    let out = resolve_out_dir(&args.out, &loaded, &mut prov);
    ensure_out_dir(&out)?;

    let (pathwise, chain) = match &model {
        BuiltModel::Elementary(m) => {
            let start = config::elementary_start(&loaded.config, m.dim(), &mut prov)?;
            let strategy = elementary_strategy(&loaded, &mut prov)?;
            estimate_pair(m, strategy.as_ref(), &start, &run, &cost)?
        }
        BuiltModel::Cable(m) => {
            let m = m.as_ref();
            let start = config::cable_start(&loaded.config, m, &mut prov)?;
            let strategy = cable_strategy(&loaded, &mut prov)?;
            estimate_pair(m, strategy.as_ref(), &start, &run, &cost)?
        }
    };

    let gap = (pathwise.mean - chain.mean).abs();
    let tolerance = 3.0 * (pathwise.std_err + chain.std_err);
    let equivalent = gap <= tolerance;
    let report = EvaluationReport {
        command: "evaluate",
        crate_version: VERSION,
        config_sha256: &loaded.sha256,
        master_seed: run.seed,
        chain_seed: run.seed.wrapping_add(1),
        model: model.kind(),
        n_trajectories: run.n_traj,
        horizon: run.horizon,
        dt: run.dt,
        pathwise_mean: pathwise.mean,
        pathwise_std_err: pathwise.std_err,
        chain_mean: chain.mean,
        chain_std_err: chain.std_err,
        gap,
        tolerance,
        equivalent,
        provenance: &prov,
    };
    artifacts::write_json(&out.join("evaluation.json"), &report)?;

    println!(
        "evaluate: pathwise {:.6} +- {:.3e}, chain {:.6} +- {:.3e}, gap {:.3e} vs 3-sigma band {:.3e}: {}",
        pathwise.mean,
        pathwise.std_err,
        chain.mean,
        chain.std_err,
        gap,
        tolerance,
        if equivalent { "equivalent" } else { "NOT equivalent" },
    );
    if equivalent {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "estimator gap {gap:.3e} exceeds the 3-sigma band {tolerance:.3e}"
        )))
    }
}

#[derive(Serialize)]
struct CheckRow {
    name: &'static str,
    passed: bool,
    detail: String,
}

#[derive(Serialize)]
struct VerificationReport {
    command: &'static str,
    crate_version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    config_sha256: Option<String>,
    checks: Vec<CheckRow>,
    all_passed: bool,
}

pub fn verify_cmd(args: &VerifyArgs) -> Result<(), CliError> {
    let loaded = match &args.config {
        Some(path) => Some(config::load(path)?),
        None => None,
    };
    let out = args
        .out
        .clone()
        .or_else(|| {
            loaded
                .as_ref()
                .and_then(|l| l.config.run.as_ref())
                .and_then(|r| r.out_dir.clone())
        })
        .unwrap_or_else(|| PathBuf::from("out"));
    let config_sha256 = loaded.map(|l| l.sha256);
    ensure_out_dir(&out)?;

    let outcomes = checks::run_all();
    for outcome in &outcomes {
        println!(
            "verify {}: {} ({})",
            outcome.name,
            if outcome.passed { "PASS" } else { "FAIL" },
            outcome.detail
        );
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    let report = VerificationReport {
        command: "verify",
        crate_version: VERSION,
        config_sha256,
        checks: outcomes
            .into_iter()
            .map(|o| CheckRow {
                name: o.name,
                passed: o.passed,
                detail: o.detail,
            })
            .collect(),
        all_passed: failed == 0,
    };
    artifacts::write_json(&out.join("verification.json"), &report)?;

    if failed == 0 {
        println!("verify: all {} properties hold", report.checks.len());
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "{failed} of {} properties failed",
            report.checks.len()
        )))
    }
}
