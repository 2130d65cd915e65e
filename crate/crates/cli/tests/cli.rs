//! End-to-end tests of the `pdmp` binary: exit codes, artifact shapes,
//! determinism, and the cross-command policy round trip.

use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn pdmp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pdmp"))
}

fn run(args: &[&str]) -> Output {
    pdmp().args(args).output().expect("binary runs")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(body).unwrap()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// All regular files in a directory as sorted (name, bytes) pairs.
fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

fn benchmark_sim_config() -> Value {
    json!({
        "model": {"elementary": {"dim": 2, "u_max": 1.0}},
        "cost": {"kappa": 1.0, "v_ref": {"constant": [0.5, 0.0]}, "control_quad": 0.1},
        "run": {
            "horizon": 1.0,
            "seed": 7,
            "n_traj": 2,
            "dt": 1e-3,
            "dense_stride": 50,
            "start": {"coeffs": [0.8, -0.2], "mode": "+1"},
            "strategy": {"constant": 0.3}
        }
    })
}

#[test]
fn simulate_reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "sim.json", &benchmark_sim_config());
    for out in ["a", "b"] {
        let out_dir = tmp.path().join(out);
        let result = run(&[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&result), 0, "{}", stderr_text(&result));
    }
    let a = dir_contents(&tmp.path().join("a"));
    let b = dir_contents(&tmp.path().join("b"));
    assert_eq!(a.len(), 5, "metadata plus two files per trajectory");
    assert_eq!(a, b, "reruns must reproduce every byte");
}

#[test]
fn simulate_artifacts_share_the_jump_structure() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "sim.json", &benchmark_sim_config());
    let out_dir = tmp.path().join("out");
    let result = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "{}", stderr_text(&result));

    let metadata = read_json(&out_dir.join("metadata.json"));
    assert_eq!(metadata["master_seed"], 7);
    assert_eq!(metadata["model"], "elementary");
    assert_eq!(metadata["provenance"]["model.dynamics"], "paper");
    assert_eq!(metadata["provenance"]["cost.norm"], "configuration-default");
    assert_eq!(metadata["provenance"]["run.seed"], "user");
    let jump_counts: Vec<usize> = metadata["jump_counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap() as usize)
        .collect();

    for (i, &jumps) in jump_counts.iter().enumerate() {
        let chain = std::fs::read_to_string(out_dir.join(format!("path_{i:04}.csv"))).unwrap();
        let rows: Vec<&str> = chain.lines().collect();
        assert_eq!(rows[0], "n,T_n,d_n,nu_1,nu_2");
        assert_eq!(rows.len(), jumps + 2, "header plus start plus one row per jump");

        let dense = std::fs::read_to_string(out_dir.join(format!("trajectory_{i:04}.csv"))).unwrap();
        let mut lines = dense.lines();
        assert_eq!(lines.next().unwrap(), "t,coeff_1,coeff_2,d");
        let mut mode_switches = 0;
        let mut previous_mode: Option<String> = None;
        for line in lines {
            let mode = line.rsplit(',').next().unwrap().to_string();
            assert!(mode == "+1" || mode == "-1", "unexpected mode label {mode}");
            if previous_mode.as_deref().is_some_and(|p| p != mode) {
                mode_switches += 1;
            }
            previous_mode = Some(mode);
        }
        assert_eq!(mode_switches, jumps, "each jump flips the recorded mode");
    }
}

#[test]
fn unknown_configuration_keys_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let mut config = benchmark_sim_config();
    config["run"]["typo_field"] = json!(1);
    let path = write_config(tmp.path(), "bad.json", &config);
    let result = run(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(exit_code(&result), 2);
    assert!(
        stderr_text(&result).contains("typo_field"),
        "the error names the offending key: {}",
        stderr_text(&result)
    );
}

#[test]
fn missing_referenced_files_fail_at_load_time() {
    let tmp = TempDir::new().unwrap();
    let config = json!({
        "model": {"elementary": {"dim": 1, "u_max": 1.0}},
        "cost": {"kappa": 1.0, "v_ref": {"csv": "nowhere.csv"}},
        "run": {"horizon": 1.0}
    });
    let path = write_config(tmp.path(), "badref.json", &config);
    let result = run(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(exit_code(&result), 2);
    assert!(stderr_text(&result).contains("nowhere.csv"));
}

#[test]
fn seed_flag_overrides_the_configuration() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "sim.json", &benchmark_sim_config());
    let out_dir = tmp.path().join("out");
    let result = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "99",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "{}", stderr_text(&result));
    let metadata = read_json(&out_dir.join("metadata.json"));
    assert_eq!(metadata["master_seed"], 99);
    assert_eq!(metadata["provenance"]["run.seed"], "user");
}

#[test]
fn out_dir_comes_from_the_run_block_unless_overridden() {
    let tmp = TempDir::new().unwrap();
    let mut config = benchmark_sim_config();
    let configured = tmp.path().join("from-config");
    config["run"]["out_dir"] = json!(configured.to_str().unwrap());
    config["run"]["n_traj"] = json!(1);
    let path = write_config(tmp.path(), "sim.json", &config);

    let result = run(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(exit_code(&result), 0, "{}", stderr_text(&result));
    assert!(configured.join("metadata.json").is_file());
    let metadata = read_json(&configured.join("metadata.json"));
    assert_eq!(metadata["provenance"]["run.out_dir"], "user");

    let flagged = tmp.path().join("from-flag");
    let result = run(&[
        "simulate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        flagged.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "{}", stderr_text(&result));
    assert!(flagged.join("metadata.json").is_file());
}

#[test]
fn verify_writes_a_passing_report() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("out");
    let result = run(&["verify", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(exit_code(&result), 0, "{}", stderr_text(&result));
    let report = read_json(&out_dir.join("verification.json"));
    assert_eq!(report["all_passed"], true);
    let checks = report["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 10);
    assert!(checks.iter().all(|c| c["passed"] == true));
    let stdout = String::from_utf8_lossy(&result.stdout).into_owned();
    assert!(stdout.contains("gating-rate-table: PASS"));
}

fn zero_cost_solve_config() -> Value {
    json!({
        "model": {"elementary": {"dim": 1, "u_max": 1.0}},
        "cost": {"kappa": 0.0, "v_ref": {"constant": [0.0]}},
        "solver": {
            "coeff_min": -1.0, "coeff_max": 1.0,
            "nodes_per_axis": 5, "h_nodes": 4,
            "control_atoms": [0.0, 1.0], "lattice_step": 2,
            "m2": 1.0
        },
        "run": {"horizon": 0.5}
    })
}

#[test]
fn zero_cost_solve_is_flat_in_one_sweep() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "zero.json", &zero_cost_solve_config());
    for out in ["a", "b"] {
        let out_dir = tmp.path().join(out);
        let result = run(&[
            "solve",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&result), 0, "{}", stderr_text(&result));
    }
    let values = read_json(&tmp.path().join("a/value.json"));
    assert!(values["values"]
        .as_array()
        .unwrap()
        .iter()
        .all(|v| v.as_f64().unwrap() == 0.0));
    let report = read_json(&tmp.path().join("a/report.json"));
    assert_eq!(report["iterations"], 1);
    assert_eq!(report["contraction"], report["contraction_recomputed"]);
    assert!(report["contraction"].as_f64().unwrap() <= 0.9);
    assert_eq!(
        dir_contents(&tmp.path().join("a")),
        dir_contents(&tmp.path().join("b")),
        "solves are deterministic"
    );
}

#[test]
fn zero_cost_evaluation_is_exact() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "zero.json",
        &json!({
            "model": {"elementary": {"dim": 1, "u_max": 1.0}},
            "cost": {"kappa": 0.0, "v_ref": {"constant": [0.0]}},
            "run": {"horizon": 0.5, "seed": 2, "n_traj": 16}
        }),
    );
    let out_dir = tmp.path().join("out");
    let result = run(&[
        "evaluate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "{}", stderr_text(&result));
    let report = read_json(&out_dir.join("evaluation.json"));
    assert_eq!(report["pathwise_mean"], 0.0);
    assert_eq!(report["chain_mean"], 0.0);
    assert_eq!(report["equivalent"], true);
}

#[test]
fn solved_policy_drives_simulation_and_evaluation() {
    let tmp = TempDir::new().unwrap();
    let solve_config = write_config(
        tmp.path(),
        "solve.json",
        &json!({
            "model": {"elementary": {"dim": 1, "u_max": 1.0}},
            "cost": {"kappa": 50.0, "v_ref": {"constant": [0.5]}, "control_quad": 0.05},
            "solver": {
                "coeff_min": -1.0, "coeff_max": 1.0,
                "nodes_per_axis": 9, "h_nodes": 6,
                "control_atoms": [-1.0, 0.0, 1.0], "lattice_step": 2,
                "m2": 1.0, "dt": 2e-3
            },
            "run": {"horizon": 1.0}
        }),
    );
    let solved = tmp.path().join("solved");
    let result = run(&[
        "solve",
        "--config",
        solve_config.to_str().unwrap(),
        "--out",
        solved.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "{}", stderr_text(&result));

    let driven = json!({
        "model": {"elementary": {"dim": 1, "u_max": 1.0}},
        "cost": {"kappa": 50.0, "v_ref": {"constant": [0.5]}, "control_quad": 0.05},
        "run": {
            "horizon": 1.0, "seed": 11, "n_traj": 200, "dt": 1e-3,
            "start": {"coeffs": [1.0]},
            "strategy": {"policy": "solved/policy.json"}
        }
    });
    let eval_config = write_config(tmp.path(), "eval.json", &driven);
    let eval_out = tmp.path().join("evaluated");
    let result = run(&[
        "evaluate",
        "--config",
        eval_config.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "{}", stderr_text(&result));
    let report = read_json(&eval_out.join("evaluation.json"));
    assert_eq!(report["equivalent"], true);
    assert!(report["pathwise_mean"].as_f64().unwrap() > 0.0);

    let mut sim = driven.clone();
    sim["run"]["n_traj"] = json!(1);
    let sim_config = write_config(tmp.path(), "sim.json", &sim);
    let sim_out = tmp.path().join("simulated");
    let result = run(&[
        "simulate",
        "--config",
        sim_config.to_str().unwrap(),
        "--out",
        sim_out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "{}", stderr_text(&result));
    assert!(sim_out.join("trajectory_0000.csv").is_file());
}

#[test]
fn cable_runs_report_the_voltage_envelope() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "cable.json",
        &json!({
            "model": {"hh-chr2": {
                "density": 4, "dim": 8, "u_max": 1.0,
                "variant": "four-state", "params": {"g_chr2": 0.8}
            }},
            "run": {
                "horizon": 2.0, "seed": 21, "n_traj": 1,
                "dt": 1e-3, "dense_stride": 20,
                "strategy": {"constant": 0.6}
            }
        }),
    );
    let out_dir = tmp.path().join("out");
    let result = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "{}", stderr_text(&result));

    let metadata = read_json(&out_dir.join("metadata.json"));
    let band = metadata["voltage_band"].as_array().unwrap();
    let (lo, hi) = (band[0].as_f64().unwrap(), band[1].as_f64().unwrap());
    let v_min = metadata["voltage_min"].as_f64().unwrap();
    let v_max = metadata["voltage_max"].as_f64().unwrap();
    assert!(lo < hi);
    assert!(v_min >= lo - 0.5 && v_max <= hi + 0.5, "{v_min}..{v_max} vs {lo}..{hi}");
    assert!(metadata["clamp_events"].is_u64());
    assert_eq!(metadata["provenance"]["model.params.g_chr2"], "user");
    assert_eq!(metadata["provenance"]["model.params.g_na"], "paper");

    let chain = std::fs::read_to_string(out_dir.join("path_0000.csv")).unwrap();
    let first_row = chain.lines().nth(1).unwrap();
    assert!(
        first_row.split(',').nth(2).unwrap().contains('|'),
        "cable mode labels list one gating state per site: {first_row}"
    );
}

#[test]
fn solve_rejects_the_cable_model() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "cable-solve.json",
        &json!({
            "model": {"hh-chr2": {"density": 4, "dim": 8, "u_max": 1.0}},
            "cost": {"kappa": 1.0, "v_ref": {"constant": [0,0,0,0,0,0,0,0]}},
            "solver": {
                "coeff_min": -1.0, "coeff_max": 1.0,
                "nodes_per_axis": 3, "h_nodes": 3,
                "control_atoms": [0.5], "m2": 1.0
            },
            "run": {"horizon": 1.0}
        }),
    );
    let result = run(&["solve", "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&result), 2);
    assert!(stderr_text(&result).contains("elementary"));
}

#[test]
fn evaluate_without_a_cost_block_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "nocost.json",
        &json!({
            "model": {"elementary": {"dim": 1, "u_max": 1.0}},
            "run": {"horizon": 1.0, "seed": 1, "n_traj": 8}
        }),
    );
    let result = run(&["evaluate", "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&result), 2);
    assert!(stderr_text(&result).contains("cost"));
}

#[test]
fn scheduled_references_integrate_exactly() {
    // A triangular reference with the field pinned at zero (zero start,
    // zero control) has running cost kappa * integral of ref(t)^2, which
    // the trapezoid quadrature reproduces to its own order; the schedule
    // ramp 0 -> 0.5 -> 0 over [0, 1] gives exactly kappa / 12.
    let tmp = TempDir::new().unwrap();
    std::fs::write(
        tmp.path().join("ref.csv"),
        "t,coeff_1\n0.0,0.0\n0.5,0.5\n1.0,0.0\n",
    )
    .unwrap();
    let config = write_config(
        tmp.path(),
        "sched.json",
        &json!({
            "model": {"elementary": {"dim": 1, "u_max": 1.0}},
            "cost": {"kappa": 2.0, "v_ref": {"csv": "ref.csv"}},
            "run": {"horizon": 1.0, "seed": 5, "n_traj": 8, "strategy": {"constant": 0.0}}
        }),
    );
    let out_dir = tmp.path().join("out");
    let result = run(&[
        "evaluate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "{}", stderr_text(&result));
    let report = read_json(&out_dir.join("evaluation.json"));
    let pathwise = report["pathwise_mean"].as_f64().unwrap();
    assert!(
        (pathwise - 2.0 / 12.0).abs() < 1e-6,
        "pathwise {pathwise} vs 1/6"
    );
}
