//! End-to-end checks of the binary's exit-code contract and output files.

use std::path::PathBuf;
use std::process::Command;

fn crqos() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crqos"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("crqos-e2e-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn solve_trivial_scenario_exits_zero() {
    let dir = temp_dir("solve");
    let out = crqos()
        .args(["solve", "--n-cr", "2", "--n-pu", "1", "--seed", "3"])
        .args(["--out", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let record = dir.join("result_cdma-eq_3.toml");
    assert!(record.exists());
    let text = std::fs::read_to_string(record).unwrap();
    assert!(text.contains("seed = 3"));
    assert!(text.contains("feasible = true"));
}

#[test]
fn solve_unsatisfiable_scenario_exits_two() {
    // Two co-channel CRs with symmetric heavy cross gains: no power pair
    // satisfies both SINR thresholds.
    let dir = temp_dir("unsat");
    let scenario = r#"
mode = "cdma-equal"
seed = 0
noise_floor_mw = 1e-6
spreading_gain = 128.0
frame_slots = 0

[[cr]]
id = 0
tx = [0.0, 0.0]
rx = [5.0, 0.0]
power_budget_mw = 100.0
power_step_mw = 2.0
sinr_threshold = 2.0
rate_min_bps = 250000.0
rate_max_bps = 1000000.0
rate_step_bps = 250000.0

[[cr]]
id = 1
tx = [0.0, 10.0]
rx = [5.0, 10.0]
power_budget_mw = 100.0
power_step_mw = 2.0
sinr_threshold = 2.0
rate_min_bps = 250000.0
rate_max_bps = 1000000.0
rate_step_bps = 250000.0

[gains]
cr_to_cr = [[0.01, 0.009], [0.009, 0.01]]
cr_to_pu = []
pu_noise_mw = [0.0, 0.0]
"#;
    let path = dir.join("unsat.toml");
    std::fs::write(&path, scenario).unwrap();
    let out = crqos()
        .args(["solve", "--scenario", path.to_str().unwrap()])
        .args(["--out", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_scenario_file_exits_one_with_path() {
    let out = crqos()
        .args(["solve", "--scenario", "/nonexistent/scenario.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/nonexistent/scenario.toml"), "stderr: {err}");
}

#[test]
fn validate_small_run_exits_zero() {
    let out = crqos().args(["validate", "--n", "12"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("0 mismatches"), "stdout: {text}");
}

#[test]
fn validate_zero_instances_warns_and_passes() {
    let out = crqos().args(["validate", "--n", "0"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("vacuous"), "stdout: {text}");
}

#[test]
fn trace_ends_in_quiescence_marker_and_is_deterministic() {
    let run = || {
        let out = crqos()
            .args(["trace", "--n-cr", "3", "--n-pu", "1", "--seed", "11", "--delay-max", "2"])
            .output()
            .unwrap();
        assert!(out.status.success());
        String::from_utf8_lossy(&out.stdout).into_owned()
    };
    let a = run();
    assert!(a.contains("# outcome"), "trace ends with an outcome marker");
    assert!(a.lines().count() > 3, "per-delivery records present");
    let b = run();
    assert_eq!(a, b, "trace must be deterministic per seed");
}

#[test]
fn sweep_writes_deterministic_csv_and_plots() {
    let dir_a = temp_dir("sweep-a");
    let dir_b = temp_dir("sweep-b");
    let config = r#"
runs_per_point = 2
base_seed = 9
n_cr = [3, 4, 5]
n_pu = 1
thresholds_mw = [1e-7]
steps_mw = [2.0]
delay_max = [0]
mode = "cdma-equal-rate"
cycle_cap = 2000

[scenario]
area_side_m = 500.0
pair_dist_m = [10.0, 25.0]
noise_floor_mw = 1e-9
pu_ambient_mw = 1e-9
sinr_range = [0.5, 1.5]
"#;
    let config_path = dir_a.join("sweep.toml");
    std::fs::write(&config_path, config).unwrap();
    for dir in [&dir_a, &dir_b] {
        let out = crqos()
            .args(["sweep", "--config", config_path.to_str().unwrap()])
            .args(["--out", dir.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir_a.join("sweep.csv")).unwrap();
    let b = std::fs::read(dir_b.join("sweep.csv")).unwrap();
    assert_eq!(a, b, "identical config+seed must give identical CSV bytes");
    assert!(dir_a.join("cycles_vs_n_cr.svg").exists());
}

#[test]
fn env_var_sets_default_output_dir() {
    let dir = temp_dir("envvar");
    let out = crqos()
        .args(["solve", "--n-cr", "2", "--n-pu", "1", "--seed", "5"])
        .env("CRQOS_OUT_DIR", dir.to_str().unwrap())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.join("result_cdma-eq_5.toml").exists());
}
