//! End-to-end tests of the installed binary: exit codes, artifact layout,
//! determinism, and the config override chain.

use std::path::Path;
use std::process::{Command, Output};

fn pxlap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pxlap"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn read_json(dir: &Path, name: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join(name))
        .unwrap_or_else(|e| panic!("{name} should exist: {e}"));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{name} should be JSON: {e}"))
}

#[test]
fn unknown_config_key_exits_2_with_line_numbered_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "n = 61\nbogus_key = 3\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = pxlap(&[
        "solve-minimal",
        "--config",
        cfg.to_str().unwrap(),
        "--lambda",
        "1",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "stderr names the line: {stderr}");
    assert!(stderr.contains("bogus_key"), "stderr names the key: {stderr}");
    let err = read_json(&out_dir, "error.json");
    assert_eq!(err["exit_code"], 2);
    assert_eq!(err["command"], "solve-minimal");
}

#[test]
fn missing_lambda_is_a_config_error_with_guidance() {
    let dir = tempfile::tempdir().unwrap();
    let out = pxlap(&["solve-minimal", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("lambda"), "stderr points at the missing key: {stderr}");
}

#[test]
fn flags_override_file_values_and_the_manifest_echoes_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "n = 61\nlambda = 2.0   # overridden below\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = pxlap(&[
        "solve-minimal",
        "--config",
        cfg.to_str().unwrap(),
        "--lambda",
        "5.0",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let manifest = read_json(&out_dir, "manifest.json");
    assert_eq!(manifest["config"]["lambda"], 5.0);
    assert_eq!(manifest["config"]["n"], 61);
    assert_eq!(manifest["outcome"]["status"], "converged");
    assert_eq!(manifest["command"], "solve-minimal");
    assert!(manifest["config_sha256"].as_str().unwrap().len() == 64);
    // Every artifact named by the manifest is present on disk.
    for artifact in manifest["artifacts"].as_array().unwrap() {
        assert!(out_dir.join(artifact.as_str().unwrap()).exists());
    }
}

#[test]
fn identical_runs_write_byte_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let args =
        |out: &Path| -> Vec<String> {
            ["solve-minimal", "--n", "101", "--lambda", "9", "--out-dir", out.to_str().unwrap()]
                .iter()
                .map(|s| s.to_string())
                .collect()
        };
    let (d1, d2) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&d1, &d2] {
        let out = Command::new(env!("CARGO_BIN_EXE_pxlap"))
            .args(args(d))
            .output()
            .expect("binary spawns");
        assert_eq!(out.status.code(), Some(0));
    }
    let bytes1 = std::fs::read(d1.join("solution.csv")).unwrap();
    let bytes2 = std::fs::read(d2.join("solution.csv")).unwrap();
    assert_eq!(bytes1, bytes2, "solution CSVs differ between identical runs");
    let (m1, m2) = (read_json(&d1, "manifest.json"), read_json(&d2, "manifest.json"));
    assert_eq!(m1["config_sha256"], m2["config_sha256"]);
    // The CSV is header plus one row per node with a 17-significant-digit value.
    let text = String::from_utf8(bytes1).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,u"));
    assert_eq!(lines.clone().count(), 101);
    let first = lines.next().unwrap();
    assert!(first.split(',').nth(1).unwrap().contains('e'), "scientific notation: {first}");
}

#[test]
fn diverged_coupling_exits_3_and_the_manifest_records_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = pxlap(&[
        "solve-minimal",
        "--n",
        "61",
        "--lambda",
        "200",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 3);
    let manifest = read_json(dir.path(), "manifest.json");
    assert_eq!(manifest["outcome"]["status"], "diverged");
    let err = read_json(dir.path(), "error.json");
    assert_eq!(err["exit_code"], 3);
}

#[test]
fn lambda_star_writes_a_probe_trace_and_a_tight_bracket() {
    let dir = tempfile::tempdir().unwrap();
    let out = pxlap(&["lambda-star", "--n", "61", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let manifest = read_json(dir.path(), "manifest.json");
    let (lo, hi) = (
        manifest["outcome"]["lo"].as_f64().unwrap(),
        manifest["outcome"]["hi"].as_f64().unwrap(),
    );
    assert!(lo > 0.0 && hi > lo);
    assert!((hi - lo) / lo <= 1e-2, "relative width {:.3e}", (hi - lo) / lo);
    let trace = std::fs::read_to_string(dir.path().join("lambda_star_trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("lambda,status,iterations,final_sup"));
    assert!(lines.count() >= 2, "at least one probe per bracket end");
}

#[test]
fn blowup_demo_decays_at_zero_coupling() {
    let dir = tempfile::tempdir().unwrap();
    let out = pxlap(&[
        "blowup-demo",
        "--n",
        "61",
        "--lambda",
        "0",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let manifest = read_json(dir.path(), "manifest.json");
    assert_eq!(manifest["outcome"]["blew_up"], false);
    assert_eq!(manifest["outcome"]["inconclusive"], false);
    let trace = std::fs::read_to_string(dir.path().join("blowup_trace.csv")).unwrap();
    assert!(trace.starts_with("t,sup\n"));
}

#[test]
fn verify_exits_0_on_defaults_and_4_under_an_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean");
    let out = pxlap(&["verify", "--out-dir", clean.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&clean, "verify_report.json");
    assert_eq!(report["all_passed"], true);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 15);

    let faulty = dir.path().join("faulty");
    let out = pxlap(&["verify", "--inject-fault", "--out-dir", faulty.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 4);
    let report = read_json(&faulty, "verify_report.json");
    assert_eq!(report["all_passed"], false);
    let failed: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, ["jacobian-consistency"], "only the faulted check fails");
    let err = read_json(&faulty, "error.json");
    assert_eq!(err["exit_code"], 4);
}
