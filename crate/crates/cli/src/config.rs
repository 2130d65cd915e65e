//! Experiment configuration: a JSON document with one block per concern
//! (model, cost, solver, run), strict about unknown keys.
//!
//! Every resolved quantity carries a provenance flag in the output
//! metadata: `"user"` for values the configuration (or a flag) supplied,
//! `"configuration-default"` for values this tool filled in, and `"paper"`
//! for constants fixed by the published models the core crate implements
//! (rate laws, gating tables, physiological parameter defaults). Files a
//! configuration references must exist when it is loaded, so a bad path
//! fails before any work starts.

use crate::artifacts;
use crate::CliError;
use pdmp_core::mdp::{CostNorm, QuadraticCost, SolverOptions, StateGrid};
use pdmp_core::models::elementary::{ElementaryModel, Polarity};
use pdmp_core::models::hh::{ChannelConfig, Chr2Variant, HHParams, HodgkinHuxleyModel};
use pdmp_core::rule::{enumerate_rules, RelaxedRule};
use pdmp_core::{JumpPoint, Model, SpectralField};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Where each resolved value came from, keyed by its configuration path.
pub type Provenance = BTreeMap<String, &'static str>;

/// The value was taken from the configuration or a command-line flag.
pub const USER: &str = "user";
/// The value is a default this tool filled in.
pub const DEFAULT: &str = "configuration-default";
/// The value is a constant of the published model.
pub const PAPER: &str = "paper";

pub fn mark(prov: &mut Provenance, key: &str, set_by_user: bool) {
    prov.insert(key.to_string(), if set_by_user { USER } else { DEFAULT });
}

/// Top-level configuration document.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub cost: Option<CostSpec>,
    #[serde(default)]
    pub solver: Option<SolverSpec>,
    #[serde(default)]
    pub run: Option<RunSpec>,
}

/// Which model to drive, keyed by kind.
#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum ModelSpec {
    /// The two-mode scalar benchmark.
    Elementary(ElementarySpec),
    /// The stochastic cable with light-gated channels.
    HhChr2(CableSpec),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementarySpec {
    pub dim: usize,
    pub u_max: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CableSpec {
    /// Site-lattice density `N` (the cable carries `N - 1` channel sites).
    pub density: u32,
    /// Retained sine modes of the membrane potential.
    pub dim: usize,
    /// Peak light intensity.
    pub u_max: f64,
    #[serde(default)]
    pub variant: Option<Chr2Variant>,
    /// Physical parameter overrides; omitted entries keep the published
    /// values.
    #[serde(default)]
    pub params: Option<serde_json::Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub kappa: f64,
    pub v_ref: VRefSpec,
    #[serde(default)]
    pub control_quad: Option<f64>,
    #[serde(default)]
    pub control_lin: Option<f64>,
    #[serde(default)]
    pub offset: Option<f64>,
    #[serde(default)]
    pub terminal_quad: Option<f64>,
    #[serde(default)]
    pub terminal_offset: Option<f64>,
    #[serde(default)]
    pub norm: Option<CostNorm>,
}

/// The tracking reference: a constant profile or a CSV time series
/// (header `t,coeff_1,...,coeff_K`, strictly increasing times).
#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum VRefSpec {
    Constant(Vec<f64>),
    Csv(PathBuf),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub coeff_min: f64,
    pub coeff_max: f64,
    pub nodes_per_axis: usize,
    pub h_nodes: usize,
    /// Control levels the relaxed rules mix over.
    pub control_atoms: Vec<f64>,
    #[serde(default)]
    pub segments: Option<usize>,
    /// Mixture weights are enumerated on the lattice of multiples of
    /// `1 / lattice_step`.
    #[serde(default)]
    pub lattice_step: Option<usize>,
    /// Norm bound on the admissible initial fields.
    pub m2: f64,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub sup_tol: Option<f64>,
    #[serde(default)]
    pub max_iterations: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub horizon: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub n_traj: Option<usize>,
    #[serde(default)]
    pub dt: Option<f64>,
    /// Record every n-th flow step in the dense output.
    #[serde(default)]
    pub dense_stride: Option<usize>,
    /// Output directory; an explicit `--out` flag wins over this.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub start: Option<StartSpec>,
    #[serde(default)]
    pub strategy: Option<StrategySpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSpec {
    #[serde(default)]
    pub coeffs: Option<Vec<f64>>,
    /// Benchmark polarity, `"+1"` or `"-1"`.
    #[serde(default)]
    pub mode: Option<String>,
    /// Cable channel configuration, one code per site.
    #[serde(default)]
    pub channel_codes: Option<Vec<u8>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum StrategySpec {
    /// Play one control level forever.
    Constant(f64),
    /// Play one relaxed rule after every jump.
    Rule(RuleSpec),
    /// Follow a solved policy table (benchmark model only).
    Policy(PathBuf),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub atoms: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
}

/// A parsed configuration plus its fingerprint and base directory.
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
    dir: PathBuf,
}

impl LoadedConfig {
    /// Resolve a referenced file relative to the configuration's directory.
    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }
}

/// Read, parse, and statically validate a configuration file. Parse
/// errors carry the offending line and field; referenced files must
/// already exist.
pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config: ExperimentConfig = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let loaded = LoadedConfig {
        sha256: artifacts::sha256_hex(&bytes),
        config,
        dir,
    };

    let mut referenced: Vec<&Path> = Vec::new();
    if let Some(CostSpec {
        v_ref: VRefSpec::Csv(p),
        ..
    }) = &loaded.config.cost
    {
        referenced.push(p);
    }
    if let Some(RunSpec {
        strategy: Some(StrategySpec::Policy(p)),
        ..
    }) = &loaded.config.run
    {
        referenced.push(p);
    }
    for p in referenced {
        let full = loaded.resolve_path(p);
        if !full.is_file() {
            return Err(CliError::Config(format!(
                "referenced file {} does not exist",
                full.display()
            )));
        }
    }
    Ok(loaded)
}

/// A constructed model, tagged by kind for dispatch and metadata.
pub enum BuiltModel {
    Elementary(ElementaryModel),
    Cable(Box<HodgkinHuxleyModel>),
}

impl BuiltModel {
    pub fn kind(&self) -> &'static str {
        match self {
            BuiltModel::Elementary(_) => "elementary",
            BuiltModel::Cable(_) => "hh-chr2",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BuiltModel::Elementary(m) => m.dim(),
            BuiltModel::Cable(m) => m.dim(),
        }
    }
}

pub fn build_model(cfg: &ExperimentConfig, prov: &mut Provenance) -> Result<BuiltModel, CliError> {
    match &cfg.model {
        ModelSpec::Elementary(spec) => {
            if spec.dim == 0 {
                return Err(CliError::Config("model.dim must be at least 1".into()));
            }
            if !(spec.u_max.is_finite() && spec.u_max > 0.0) {
                return Err(CliError::Config(format!(
                    "model.u_max must be positive, got {}",
                    spec.u_max
                )));
            }
            prov.insert("model.dim".into(), USER);
            prov.insert("model.u_max".into(), USER);
            prov.insert("model.dynamics".into(), PAPER);
            Ok(BuiltModel::Elementary(ElementaryModel::new(
                spec.dim, spec.u_max,
            )))
        }
        ModelSpec::HhChr2(spec) => {
            let variant = spec.variant.unwrap_or(Chr2Variant::FourState);
            let params = match &spec.params {
                None => HHParams::default(),
                Some(value) => serde_json::from_value(value.clone())
                    .map_err(|e| CliError::Config(format!("model.params: {e}")))?,
            };
            prov.insert("model.density".into(), USER);
            prov.insert("model.dim".into(), USER);
            prov.insert("model.u_max".into(), USER);
            mark(prov, "model.variant", spec.variant.is_some());
            prov.insert("model.dynamics".into(), PAPER);
            prov.insert("model.gating_rates".into(), PAPER);
            // Parameters the configuration overrides are the user's; the
            // rest keep their published values.
            let user_keys: Vec<String> = match &spec.params {
                Some(serde_json::Value::Object(map)) => map.keys().cloned().collect(),
                _ => Vec::new(),
            };
            if let serde_json::Value::Object(all) =
                serde_json::to_value(HHParams::default()).expect("plain struct serializes")
            {
                for key in all.keys() {
                    let source = if user_keys.contains(key) { USER } else { PAPER };
                    prov.insert(format!("model.params.{key}"), source);
                }
            }
            let model = HodgkinHuxleyModel::new(spec.density, spec.dim, spec.u_max, variant, params)?;
            Ok(BuiltModel::Cable(Box::new(model)))
        }
    }
}

/// Build the cost from its block, if present. `dim` is the model's.
pub fn build_cost(
    loaded: &LoadedConfig,
    dim: usize,
    prov: &mut Provenance,
) -> Result<Option<QuadraticCost>, CliError> {
    let Some(spec) = &loaded.config.cost else {
        return Ok(None);
    };
    prov.insert("cost.kappa".into(), USER);
    prov.insert("cost.v_ref".into(), USER);
    mark(prov, "cost.control_quad", spec.control_quad.is_some());
    mark(prov, "cost.control_lin", spec.control_lin.is_some());
    mark(prov, "cost.offset", spec.offset.is_some());
    mark(prov, "cost.terminal_quad", spec.terminal_quad.is_some());
    mark(prov, "cost.terminal_offset", spec.terminal_offset.is_some());
    mark(prov, "cost.norm", spec.norm.is_some());

    let (v_ref, schedule) = match &spec.v_ref {
        VRefSpec::Constant(coeffs) => {
            if coeffs.len() != dim {
                return Err(CliError::Config(format!(
                    "cost.v_ref has {} coefficients, the model retains {dim} modes",
                    coeffs.len()
                )));
            }
            (SpectralField::new(coeffs.clone()), None)
        }
        VRefSpec::Csv(p) => {
            let samples = read_reference_csv(&loaded.resolve_path(p), dim)?;
            let base = samples[0].1.clone();
            (base, Some(samples))
        }
    };
    let mut cost = QuadraticCost::new(
        spec.kappa,
        v_ref,
        spec.control_quad.unwrap_or(0.0),
        spec.control_lin.unwrap_or(0.0),
        spec.offset.unwrap_or(0.0),
        spec.terminal_quad.unwrap_or(0.0),
        spec.terminal_offset.unwrap_or(0.0),
        spec.norm.unwrap_or(CostNorm::H),
    )?;
    if let Some(samples) = schedule {
        cost = cost.with_schedule(samples)?;
    }
    Ok(Some(cost))
}

/// Load a reference time series: header `t,coeff_1,...,coeff_K`, one
/// profile per row.
fn read_reference_csv(path: &Path, dim: usize) -> Result<Vec<(f64, SpectralField)>, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let width = reader
        .headers()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        .len();
    if width != dim + 1 {
        return Err(CliError::Config(format!(
            "{}: {width} columns, expected t plus {dim} coefficients",
            path.display()
        )));
    }
    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut values = record.iter().map(|cell| {
            cell.trim().parse::<f64>().map_err(|e| {
                CliError::Config(format!("{}: row {}: {e}", path.display(), row + 2))
            })
        });
        let t = values.next().expect("width checked")?;
        let coeffs = values.collect::<Result<Vec<f64>, CliError>>()?;
        samples.push((t, SpectralField::new(coeffs)));
    }
    if samples.is_empty() {
        return Err(CliError::Config(format!(
            "{}: the reference series is empty",
            path.display()
        )));
    }
    Ok(samples)
}

/// Fully resolved run block.
pub struct ResolvedRun {
    pub horizon: f64,
    pub seed: u64,
    pub n_traj: usize,
    pub dt: f64,
    pub dense_stride: usize,
}

/// Resolve the run block, applying the `--seed` flag and per-command
/// trajectory-count default.
pub fn build_run(
    cfg: &ExperimentConfig,
    seed_flag: Option<u64>,
    default_n_traj: usize,
    prov: &mut Provenance,
) -> Result<ResolvedRun, CliError> {
    let Some(spec) = &cfg.run else {
        return Err(CliError::Config(
            "this command needs a \"run\" block".into(),
        ));
    };
    if !(spec.horizon.is_finite() && spec.horizon > 0.0) {
        return Err(CliError::Config(format!(
            "run.horizon must be positive, got {}",
            spec.horizon
        )));
    }
    let dt = spec.dt.unwrap_or(1e-3);
    if !(dt.is_finite() && dt > 0.0) {
        return Err(CliError::Config(format!("run.dt must be positive, got {dt}")));
    }
    let n_traj = spec.n_traj.unwrap_or(default_n_traj);
    if n_traj == 0 {
        return Err(CliError::Config("run.n_traj must be at least 1".into()));
    }
    let dense_stride = spec.dense_stride.unwrap_or(10);
    if dense_stride == 0 {
        return Err(CliError::Config(
            "run.dense_stride must be at least 1".into(),
        ));
    }
    prov.insert("run.horizon".into(), USER);
    mark(prov, "run.seed", seed_flag.is_some() || spec.seed.is_some());
    mark(prov, "run.n_traj", spec.n_traj.is_some());
    mark(prov, "run.dt", spec.dt.is_some());
    mark(prov, "run.dense_stride", spec.dense_stride.is_some());
    Ok(ResolvedRun {
        horizon: spec.horizon,
        seed: seed_flag.or(spec.seed).unwrap_or(0),
        n_traj,
        dt,
        dense_stride,
    })
}

/// Starting jump point for the benchmark model.
pub fn elementary_start(
    cfg: &ExperimentConfig,
    dim: usize,
    prov: &mut Provenance,
) -> Result<JumpPoint<Polarity>, CliError> {
    let spec = cfg.run.as_ref().and_then(|r| r.start.as_ref());
    if let Some(StartSpec {
        channel_codes: Some(_),
        ..
    }) = spec
    {
        return Err(CliError::Config(
            "run.start.channel_codes only applies to the cable model".into(),
        ));
    }
    let coeffs = start_coeffs(spec, dim, prov)?;
    let mode_spec = spec.and_then(|s| s.mode.as_deref());
    let mode = match mode_spec {
        None | Some("+1") => Polarity::Plus,
        Some("-1") => Polarity::Minus,
        Some(other) => {
            return Err(CliError::Config(format!(
                "run.start.mode must be \"+1\" or \"-1\", got {other:?}"
            )))
        }
    };
    mark(prov, "run.start.mode", mode_spec.is_some());
    Ok(JumpPoint {
        field: SpectralField::new(coeffs),
        mode,
        h: 0.0,
    })
}

/// Starting jump point for the cable model (rest configuration unless
/// channel codes are given).
pub fn cable_start(
    cfg: &ExperimentConfig,
    model: &HodgkinHuxleyModel,
    prov: &mut Provenance,
) -> Result<JumpPoint<ChannelConfig>, CliError> {
    let spec = cfg.run.as_ref().and_then(|r| r.start.as_ref());
    if let Some(StartSpec { mode: Some(_), .. }) = spec {
        return Err(CliError::Config(
            "run.start.mode only applies to the benchmark model; use channel_codes".into(),
        ));
    }
    let coeffs = start_coeffs(spec, model.dim(), prov)?;
    let codes = spec.and_then(|s| s.channel_codes.clone());
    let mode = match codes {
        None => model.rest_config(),
        Some(codes) => {
            let config = ChannelConfig(codes);
            if !model.config_valid(&config) {
                return Err(CliError::Config(
                    "run.start.channel_codes is not a valid configuration for this site layout"
                        .into(),
                ));
            }
            config
        }
    };
    mark(
        prov,
        "run.start.channel_codes",
        spec.is_some_and(|s| s.channel_codes.is_some()),
    );
    Ok(JumpPoint {
        field: SpectralField::new(coeffs),
        mode,
        h: 0.0,
    })
}

fn start_coeffs(
    spec: Option<&StartSpec>,
    dim: usize,
    prov: &mut Provenance,
) -> Result<Vec<f64>, CliError> {
    let coeffs = spec.and_then(|s| s.coeffs.clone());
    mark(prov, "run.start.coeffs", coeffs.is_some());
    let coeffs = coeffs.unwrap_or_else(|| vec![0.0; dim]);
    if coeffs.len() != dim {
        return Err(CliError::Config(format!(
            "run.start.coeffs has {} entries, the model retains {dim} modes",
            coeffs.len()
        )));
    }
    Ok(coeffs)
}

/// Grid, rule family, and iteration knobs for the solver.
pub struct ResolvedSolver {
    pub grid: Arc<StateGrid<Polarity>>,
    pub rules: Vec<RelaxedRule>,
    pub options: SolverOptions,
    pub m2: f64,
}

pub fn build_solver(
    cfg: &ExperimentConfig,
    model: &ElementaryModel,
    horizon: f64,
    prov: &mut Provenance,
) -> Result<ResolvedSolver, CliError> {
    let Some(spec) = &cfg.solver else {
        return Err(CliError::Config(
            "this command needs a \"solver\" block".into(),
        ));
    };
    let segments = spec.segments.unwrap_or(1);
    let lattice_step = spec.lattice_step.unwrap_or(4);
    if !(1..=3).contains(&segments) {
        return Err(CliError::Config(format!(
            "solver.segments must be 1, 2, or 3, got {segments}"
        )));
    }
    if !(1..=16).contains(&lattice_step) {
        return Err(CliError::Config(format!(
            "solver.lattice_step must lie in 1..=16, got {lattice_step}"
        )));
    }
    if spec.control_atoms.is_empty() || spec.control_atoms.len() > 8 {
        return Err(CliError::Config(format!(
            "solver.control_atoms needs 1 to 8 levels, got {}",
            spec.control_atoms.len()
        )));
    }
    let (lo, hi) = model.control_bounds();
    for &u in &spec.control_atoms {
        if !(u.is_finite() && (lo..=hi).contains(&u)) {
            return Err(CliError::Config(format!(
                "solver control level {u} lies outside [{lo}, {hi}]"
            )));
        }
    }
    if !(spec.m2.is_finite() && spec.m2 > 0.0) {
        return Err(CliError::Config(format!(
            "solver.m2 must be positive, got {}",
            spec.m2
        )));
    }

    prov.insert("solver.coeff_range".into(), USER);
    prov.insert("solver.nodes_per_axis".into(), USER);
    prov.insert("solver.h_nodes".into(), USER);
    prov.insert("solver.control_atoms".into(), USER);
    prov.insert("solver.m2".into(), USER);
    mark(prov, "solver.segments", spec.segments.is_some());
    mark(prov, "solver.lattice_step", spec.lattice_step.is_some());
    mark(prov, "solver.dt", spec.dt.is_some());
    mark(prov, "solver.tol", spec.tol.is_some());
    mark(prov, "solver.sup_tol", spec.sup_tol.is_some());
    mark(prov, "solver.max_iterations", spec.max_iterations.is_some());

    let grid = StateGrid::for_model(
        model,
        (spec.coeff_min, spec.coeff_max),
        spec.nodes_per_axis,
        spec.h_nodes,
        horizon,
    )?;
    let rules = enumerate_rules(&spec.control_atoms, segments, lattice_step)?;
    let defaults = SolverOptions::default();
    let options = SolverOptions {
        dt: spec.dt.unwrap_or(defaults.dt),
        tol: spec.tol.unwrap_or(defaults.tol),
        sup_tol: spec.sup_tol.unwrap_or(defaults.sup_tol),
        max_iterations: spec.max_iterations.unwrap_or(defaults.max_iterations),
    };
    if !(options.dt.is_finite() && options.dt > 0.0) {
        return Err(CliError::Config(format!(
            "solver.dt must be positive, got {}",
            options.dt
        )));
    }
    Ok(ResolvedSolver {
        grid: Arc::new(grid),
        rules,
        options,
        m2: spec.m2,
    })
}
