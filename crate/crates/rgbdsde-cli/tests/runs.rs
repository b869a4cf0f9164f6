//! End-to-end behaviour of `run_experiment`: reproducibility, error capture
//! and manifest summaries.

use std::path::{Path, PathBuf};
use std::process::Command;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_rgbdsde")
}

fn run(cmd: &str, config: &str, dir: &Path, out: &str) -> (bool, String, PathBuf) {
    let config_path = dir.join(format!("{out}.json"));
    std::fs::write(&config_path, config).unwrap();
    let out_dir = dir.join(out);
    let output = Command::new(binary())
        .arg(cmd)
        .arg("--config")
        .arg(&config_path)
        .arg("--out")
        .arg(&out_dir)
        .env_remove("RGBDSDE_SEED")
        .output()
        .unwrap();
    (
        output.status.success(),
        String::from_utf8_lossy(&output.stderr).into_owned(),
        out_dir,
    )
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn manifest_without_timings(dir: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&read(&dir.join("manifest.json"))).unwrap();
    v.as_object_mut().unwrap().remove("timings");
    v
}

const RAMP: &str = r#"{
  "problem": "abstract",
  "seed": 42,
  "coefficients": { "family": "zero" },
  "obstacle": { "family": "ramp" },
  "solver": { "horizon": 1.0, "steps": 128, "m_inner": 16, "m_outer": 2, "penalty_n": 10 }
}"#;

#[test]
fn reruns_reproduce_outputs_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let (ok_a, err, out_a) = run("solve", RAMP, dir.path(), "a");
    assert!(ok_a, "{err}");
    let (ok_b, _, out_b) = run("solve", RAMP, dir.path(), "b");
    assert!(ok_b);
    for file in ["solution.csv", "diagnostics.json"] {
        assert_eq!(
            read(&out_a.join(file)),
            read(&out_b.join(file)),
            "{file} differs between reruns"
        );
    }
    assert_eq!(
        manifest_without_timings(&out_a),
        manifest_without_timings(&out_b),
        "manifests differ beyond timings"
    );
}

#[test]
fn deleting_outputs_and_rerunning_recreates_them() {
    let dir = tempfile::tempdir().unwrap();
    let (ok, _, out) = run("solve", RAMP, dir.path(), "a");
    assert!(ok);
    let before = read(&out.join("solution.csv"));
    std::fs::remove_dir_all(&out).unwrap();
    let (ok, _, out) = run("solve", RAMP, dir.path(), "a");
    assert!(ok);
    assert_eq!(before, read(&out.join("solution.csv")));
}

#[test]
fn module_errors_are_captured_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    // Field evaluation without probes is a module-level error.
    let config = r#"{
      "problem": "field",
      "seed": 1,
      "coefficients": { "family": "reflected_heat" },
      "solver": { "steps": 8, "m_inner": 64 }
    }"#;
    let (ok, _, out) = run("field", config, dir.path(), "f");
    assert!(!ok, "field run without probes must fail");
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["pass"], false);
    assert!(manifest["error"].as_str().unwrap().contains("probes"));
}

#[test]
fn oracle_comparison_records_relative_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
      "problem": "field",
      "seed": 42,
      "coefficients": { "family": "reflected_heat" },
      "solver": { "steps": 16, "m_inner": 256 },
      "probes": [ { "t": 0.5, "x": [0.5] } ],
      "oracle": { "space_steps": 50, "time_steps": 32, "compare": true, "tolerance": 0.2 }
    }"#;
    let (ok, err, out) = run("oracle", config, dir.path(), "o");
    assert!(ok, "{err}");
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&out.join("manifest.json"))).unwrap();
    assert!(manifest["metrics"]["max_rel_error"].as_f64().is_some());
    assert!(out.join("comparison.json").exists());
    assert!(out.join("fd.csv").exists());
}

#[test]
fn summarize_tabulates_and_aggregates_failures() {
    let dir = tempfile::tempdir().unwrap();
    let (ok, _, out_good) = run("solve", RAMP, dir.path(), "good");
    assert!(ok);
    let bad_config = r#"{
      "problem": "field",
      "seed": 1,
      "coefficients": { "family": "reflected_heat" },
      "solver": { "steps": 8, "m_inner": 64 }
    }"#;
    let (_, _, out_bad) = run("field", bad_config, dir.path(), "bad");

    let single = Command::new(binary())
        .arg("summarize")
        .arg(out_good.join("manifest.json"))
        .output()
        .unwrap();
    assert!(single.status.success());
    let table = String::from_utf8_lossy(&single.stdout);
    assert!(table.contains("1 run(s), 0 failed"), "{table}");
    assert!(table.contains("initial_value"), "{table}");

    let csv_path = dir.path().join("summary.csv");
    let mixed = Command::new(binary())
        .arg("summarize")
        .arg(out_good.join("manifest.json"))
        .arg(out_bad.join("manifest.json"))
        .arg("--out")
        .arg(&csv_path)
        .output()
        .unwrap();
    assert!(
        !mixed.status.success(),
        "mixed pass/fail must aggregate to failure"
    );
    let table = String::from_utf8_lossy(&mixed.stdout);
    assert!(table.contains("2 run(s), 1 failed"), "{table}");
    let csv = read(&csv_path);
    assert!(csv.starts_with("digest,seed,command,pass,metric,value\n"));
    assert!(csv.lines().count() >= 3);
}

#[test]
fn properties_exit_code_reflects_check_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
      "problem": "abstract",
      "seed": 3,
      "coefficients": { "family": "zero" },
      "obstacle": { "family": "ramp" },
      "solver": { "steps": 256, "m_inner": 16 },
      "properties": { "checks": ["monotonicity", "convergence", "energy"], "penalty_levels": [1, 10, 100, 1000] }
    }"#;
    let (ok, err, out) = run("properties", config, dir.path(), "p");
    assert!(ok, "{err}");
    let reports: serde_json::Value =
        serde_json::from_str(&read(&out.join("properties.json"))).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 3);
    for report in reports.as_array().unwrap() {
        assert_eq!(report["pass"], true, "{report}");
    }
}

#[test]
fn penalty_sweep_summary_is_monotone_in_the_level() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest_paths = Vec::new();
    for n in [1u32, 10, 100] {
        let config = format!(
            r#"{{
              "problem": "abstract",
              "seed": 5,
              "coefficients": {{ "family": "zero" }},
              "obstacle": {{ "family": "ramp" }},
              "solver": {{ "steps": 128, "m_inner": 16, "penalty_n": {n} }}
            }}"#
        );
        let (ok, err, out) = run("solve", &config, dir.path(), &format!("n{n}"));
        assert!(ok, "{err}");
        manifest_paths.push(out.join("manifest.json"));
    }
    let csv_path = dir.path().join("sweep.csv");
    let output = Command::new(binary())
        .arg("summarize")
        .args(&manifest_paths)
        .arg("--out")
        .arg(&csv_path)
        .output()
        .unwrap();
    assert!(output.status.success());
    let csv = read(&csv_path);
    let values: Vec<f64> = csv
        .lines()
        .filter(|l| l.contains(",initial_value,"))
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 3);
    assert!(
        values[0] < values[1] && values[1] < values[2],
        "penalized values not monotone in the level: {values:?}"
    );
}

#[test]
fn picard_solve_reports_iteration_history() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
      "problem": "abstract",
      "seed": 11,
      "coefficients": { "family": "contraction", "params": { "g_slope": 0.3 } },
      "solver": { "steps": 64, "m_inner": 64, "use_picard": true }
    }"#;
    let (ok, err, out) = run("solve", config, dir.path(), "picard");
    assert!(ok, "{err}");
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&out.join("manifest.json"))).unwrap();
    assert!(manifest["metrics"]["picard_iterations"].as_f64().unwrap() >= 2.0);
    assert!(manifest["metrics"]["picard_last_delta"].as_f64().unwrap() < 1e-8);
}

#[test]
fn field_problem_solve_exports_the_forward_paths() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
      "problem": "field",
      "seed": 9,
      "coefficients": { "family": "pinned_boundary" },
      "solver": { "steps": 16, "m_inner": 32 }
    }"#;
    let (ok, err, out) = run("solve", config, dir.path(), "fp");
    assert!(ok, "{err}");
    let forward = read(&out.join("forward.csv"));
    assert!(forward.starts_with("scenario,step,x0,da\n"));
    assert_eq!(forward.lines().count(), 1 + 32 * 17);
}

#[test]
fn ball_domain_config_resolves_and_solves() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
      "problem": "field",
      "seed": 4,
      "coefficients": { "family": "zero", "params": { "terminal": 1.5 } },
      "domain": { "kind": "ball", "center": [0.0, 0.0], "radius": 1.0 },
      "diffusion": { "drift_family": "constant", "drift_value": 0.0, "sigma": 0.5 },
      "solver": { "steps": 8, "m_inner": 64 }
    }"#;
    let (ok, err, out) = run("solve", config, dir.path(), "ball");
    assert!(ok, "{err}");
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&out.join("manifest.json"))).unwrap();
    // Constant terminal data is conserved in any domain.
    let value = manifest["metrics"]["initial_value"].as_f64().unwrap();
    assert!((value - 1.5).abs() < 1e-10, "{value}");
    let forward = read(&out.join("forward.csv"));
    assert!(forward.starts_with("scenario,step,x0,x1,da\n"));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
      "problem": "field",
      "seed": 21,
      "coefficients": { "family": "standard_stochastic" },
      "solver": { "steps": 16, "m_inner": 128, "m_outer": 4, "penalty_n": 10 }
    }"#;
    let config_path = dir.path().join("threads.json");
    std::fs::write(&config_path, config).unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("t{threads}"));
        let status = Command::new(binary())
            .arg("solve")
            .arg("--config")
            .arg(&config_path)
            .arg("--out")
            .arg(&out)
            .arg("--threads")
            .arg(threads)
            .env_remove("RGBDSDE_SEED")
            .output()
            .unwrap();
        assert!(status.status.success());
        outputs.push(read(&out.join("solution.csv")));
    }
    assert_eq!(outputs[0], outputs[1], "outer-path scheduling changed results");
}
