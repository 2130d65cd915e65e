//! Output artifacts: CSV trajectory dumps and JSON tables and reports.
//!
//! Artifacts are deterministic — no timestamps, provenance maps sorted by
//! key, floats printed in shortest round-trip form — so a rerun with the
//! same inputs reproduces every file byte for byte. Each file embeds the
//! SHA-256 of the configuration that produced it and the master seed.

use crate::CliError;
use pdmp_core::mdp::{Axis, PolicyStrategy, PolicyTable, StateGrid, ValueTable};
use pdmp_core::models::elementary::Polarity;
use pdmp_core::rule::RelaxedRule;
use pdmp_core::{embedded_chain, Model, Trajectory};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use std::sync::Arc;

/// Hex SHA-256 fingerprint of raw bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Write pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut body = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    body.push(b'\n');
    std::fs::write(path, body)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

/// Read and parse a JSON artifact.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Config(format!("cannot write {}: {e}", path.display()))
}

/// Dense trajectory dump: `t,coeff_1,...,coeff_K,d` with one row per
/// recorded sample; `d` is the label of the mode active at that time.
pub fn write_dense_csv<M: Model>(
    model: &M,
    traj: &Trajectory<M::Mode>,
    path: &Path,
) -> Result<(), CliError> {
    let dense = traj
        .dense
        .as_ref()
        .expect("simulation ran with dense recording enabled");
    let mut writer = csv::Writer::from_path(path).map_err(csv_error(path))?;
    let dim = traj.initial.field.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=dim).map(|k| format!("coeff_{k}")));
    header.push("d".to_string());
    writer.write_record(&header).map_err(csv_error(path))?;

    let mut record = Vec::with_capacity(dim + 2);
    for i in 0..dense.ts.len() {
        record.clear();
        record.push(dense.ts[i].to_string());
        record.extend(dense.fields[i].coeffs().iter().map(f64::to_string));
        let jumps_before = dense.jump_counts[i] as usize;
        let mode = if jumps_before == 0 {
            &traj.initial.mode
        } else {
            &traj.jumps[jumps_before - 1].mode
        };
        record.push(model.mode_label(mode));
        writer.write_record(&record).map_err(csv_error(path))?;
    }
    writer.flush().map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

/// Embedded-chain dump: `n,T_n,d_n,nu_1,...,nu_K`, one row per jump point
/// (row 0 is the starting point).
pub fn write_chain_csv<M: Model>(
    model: &M,
    traj: &Trajectory<M::Mode>,
    path: &Path,
) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_error(path))?;
    let dim = traj.initial.field.dim();
    let mut header = vec!["n".to_string(), "T_n".to_string(), "d_n".to_string()];
    header.extend((1..=dim).map(|k| format!("nu_{k}")));
    writer.write_record(&header).map_err(csv_error(path))?;

    for (n, point) in embedded_chain(traj).iter().enumerate() {
        let mut record = vec![
            n.to_string(),
            point.h.to_string(),
            model.mode_label(&point.mode),
        ];
        record.extend(point.field.coeffs().iter().map(f64::to_string));
        writer.write_record(&record).map_err(csv_error(path))?;
    }
    writer.flush().map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

#[derive(Serialize, Deserialize)]
pub struct AxisData {
    pub min: f64,
    pub max: f64,
    pub nodes: usize,
}

#[derive(Serialize, Deserialize)]
pub struct RuleData {
    pub atoms: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
}

/// Node layout shared by the value and policy tables: flat index
/// `((mode_index * h_nodes) + h_index) * coeff_count + coeff_index`, with
/// the coefficient lattice in row-major axis order.
pub const NODE_LAYOUT: &str = "mode-major, then jump-time, then coefficients row-major";

/// Serialized solved-policy table.
#[derive(Serialize, Deserialize)]
pub struct PolicyFile {
    pub config_sha256: String,
    pub master_seed: u64,
    pub crate_version: String,
    pub axes: Vec<AxisData>,
    pub h_nodes: usize,
    pub horizon: f64,
    pub modes: Vec<String>,
    pub layout: String,
    pub rules: Vec<RuleData>,
    /// Rule index per grid node.
    pub choices: Vec<usize>,
}

/// Serialized value table.
#[derive(Serialize)]
pub struct ValueFile {
    pub config_sha256: String,
    pub master_seed: u64,
    pub crate_version: String,
    pub axes: Vec<AxisData>,
    pub h_nodes: usize,
    pub horizon: f64,
    pub modes: Vec<String>,
    pub layout: String,
    pub values: Vec<f64>,
}

fn axis_data(grid_axes: &[Axis]) -> Vec<AxisData> {
    grid_axes
        .iter()
        .map(|a| AxisData {
            min: a.min,
            max: a.max,
            nodes: a.nodes,
        })
        .collect()
}

fn mode_labels<M: Model>(model: &M, modes: &[M::Mode]) -> Vec<String> {
    modes.iter().map(|m| model.mode_label(m)).collect()
}

pub fn value_file<M: Model>(
    model: &M,
    values: &ValueTable<M::Mode>,
    config_sha256: &str,
    master_seed: u64,
) -> ValueFile {
    let grid = values.grid();
    ValueFile {
        config_sha256: config_sha256.to_string(),
        master_seed,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        axes: axis_data(grid.axes()),
        h_nodes: grid.h_nodes(),
        horizon: grid.horizon(),
        modes: mode_labels(model, grid.modes()),
        layout: NODE_LAYOUT.to_string(),
        values: values.values().to_vec(),
    }
}

pub fn policy_file<M: Model>(
    model: &M,
    policy: &PolicyTable<M::Mode>,
    config_sha256: &str,
    master_seed: u64,
) -> PolicyFile {
    let grid = policy.grid();
    PolicyFile {
        config_sha256: config_sha256.to_string(),
        master_seed,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        axes: axis_data(grid.axes()),
        h_nodes: grid.h_nodes(),
        horizon: grid.horizon(),
        modes: mode_labels(model, grid.modes()),
        layout: NODE_LAYOUT.to_string(),
        rules: policy
            .rules()
            .iter()
            .map(|r| RuleData {
                atoms: r.atoms().to_vec(),
                weights: r.rows().to_vec(),
            })
            .collect(),
        choices: policy.choices().to_vec(),
    }
}

/// Rehydrate a solved policy for the two-mode benchmark model so it can
/// drive simulation and evaluation runs.
pub fn load_policy(path: &Path) -> Result<PolicyStrategy<Polarity>, CliError> {
    let file: PolicyFile = read_json(path)?;
    let modes = file
        .modes
        .iter()
        .map(|label| match label.as_str() {
            "+1" => Ok(Polarity::Plus),
            "-1" => Ok(Polarity::Minus),
            other => Err(CliError::Config(format!(
                "{}: mode {other:?} does not belong to the benchmark model",
                path.display()
            ))),
        })
        .collect::<Result<Vec<Polarity>, CliError>>()?;
    let axes = file
        .axes
        .iter()
        .map(|a| Axis {
            min: a.min,
            max: a.max,
            nodes: a.nodes,
        })
        .collect();
    let grid = Arc::new(StateGrid::new(axes, file.h_nodes, file.horizon, modes)?);
    let rules = file
        .rules
        .into_iter()
        .map(|r| RelaxedRule::new(r.atoms, r.weights))
        .collect::<Result<Vec<RelaxedRule>, _>>()?;
    let table = PolicyTable::new(grid, file.choices, rules)?;
    Ok(PolicyStrategy(Arc::new(table)))
}
