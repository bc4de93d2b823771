//! Black-box tests driving the compiled binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_arxtrack"))
}

fn model(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../models")
        .join(name)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn check_accepts_benchmark_model() {
    let out = bin().arg("check").arg(model("sec5.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    assert_eq!(v["causal"], serde_json::Value::Bool(true));
    assert_eq!(v["strongly_controllable"], serde_json::Value::Bool(true));
    assert!((v["rho"].as_f64().unwrap() - 0.75).abs() <= 1e-9);
    assert!((v["det_pi"].as_f64().unwrap() - 2.0).abs() <= 1e-9);
}

#[test]
fn check_rejects_non_causal_model() {
    let out = bin()
        .arg("check")
        .arg(model("noncausal.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.starts_with("error:"), "stderr: {err}");
    assert!(err.contains("causal"), "stderr: {err}");
    assert!(
        err.contains("1.25"),
        "diagnostic should name rho, got: {err}"
    );
}

#[test]
fn invalid_inputs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"d\": 2}").unwrap();
    let out = bin().arg("check").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error:"));

    let out = bin()
        .arg("check")
        .arg(dir.path().join("missing.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn limit_emits_golden_h() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("limit")
        .arg(model("sec5.json"))
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("limit.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!((v["H"][0][0].as_f64().unwrap() - 64.0 / 7.0).abs() <= 1e-6);
    assert!((v["H"][1][1].as_f64().unwrap() - 4.0 / 3.0).abs() <= 1e-6);
    assert!((v["Lambda_inv"][2][2].as_f64().unwrap() - 7.0 / 64.0).abs() <= 1e-6);
    assert!(v["truncation_k"].as_u64().unwrap() >= 1);
    // stdout carries the same document
    assert_eq!(stdout(&out).trim(), text.trim());
}

#[test]
fn simulate_writes_deterministic_run_csv() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [&dir_a, &dir_b] {
        let out = bin()
            .arg("simulate")
            .arg(model("sec5.json"))
            .args(["--n", "50", "--seed", "9"])
            .arg("--out-dir")
            .arg(dir.path())
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    }
    let a = fs::read(dir_a.path().join("run.csv")).unwrap();
    let b = fs::read(dir_b.path().join("run.csv")).unwrap();
    assert_eq!(a, b, "same seed must give byte-identical output");

    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "n,X_1,X_2,U_1,U_2,xref_1,xref_2,eps_1,eps_2,theta_err_sq,f_n"
    );
    assert_eq!(lines.count(), 50);
}

#[test]
fn simulate_rejects_unstable_configuration() {
    // structurally fine JSON but non-causal: refused before simulating
    let out = bin()
        .arg("simulate")
        .arg(model("noncausal.json"))
        .args(["--n", "50"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn montecarlo_writes_summary_samples_and_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("montecarlo")
        .arg(model("sec5.json"))
        .args(["--m", "5", "--n", "200"])
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["m"].as_u64(), Some(5));
    assert_eq!(summary["n"].as_u64(), Some(200));
    assert_eq!(summary["ks_stats"].as_array().unwrap().len(), 8);

    let z = fs::read_to_string(dir.path().join("z_samples.csv")).unwrap();
    let rows: Vec<&str> = z.lines().collect();
    assert_eq!(rows.len(), 6); // header + 5 realizations
    assert_eq!(rows[0].split(',').count(), 8);

    let hist = fs::read_to_string(dir.path().join("hist.csv")).unwrap();
    let rows: Vec<&str> = hist.lines().collect();
    assert_eq!(rows.len(), 41); // header + 40 bins
                                // counts per coordinate sum to M
    for c in 0..8 {
        let total: u64 = rows[1..]
            .iter()
            .map(|r| r.split(',').nth(2 + c).unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, 5, "coordinate {c}");
    }
}

#[test]
fn wls_gamma_validation() {
    let out = bin()
        .arg("simulate")
        .arg(model("sec5.json"))
        .args(["--algo", "wls", "--gamma=-1", "--n", "50"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("gamma"));
}
