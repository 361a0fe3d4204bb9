use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn covband(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covband"))
        .args(args)
        .env_remove("COVBAND_SEED")
        .output()
        .expect("binary runs")
}

fn write_spec(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const RUN: &str = r#"{
  "machine": {"family": "proposition", "params": {"alpha": 1.0, "L": 1.0}, "d": 1, "K": 2},
  "policy": {"policy": "abse"},
  "n": 2048, "reps": 3, "base_seed": 11
}"#;

#[test]
fn run_writes_outputs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "run.json", RUN);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = covband(&["run", "--spec", &spec, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["traces.csv", "summary.json", "tree.json"] {
        let x = fs::read(a.join(file)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, fs::read(b.join(file)).unwrap(), "{file} differs");
    }
    let csv = fs::read_to_string(a.join("traces.csv")).unwrap();
    assert!(csv.starts_with("run_id,rep,t,regret\n"));
    let summary: Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["run_id"], "abse");
    assert!(summary["final"]["mean"].as_f64().unwrap() >= 0.0);
    let tree: Value = serde_json::from_str(&fs::read_to_string(a.join("tree.json")).unwrap()).unwrap();
    assert_eq!(tree["d"], 1);
    assert!(!tree["live"].as_array().unwrap().is_empty());
}

#[test]
fn seed_flag_and_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "run.json",
        r#"{"machine": {"family": "static", "params": {"means": [0.5, 0.7]}, "K": 2},
            "policy": {"policy": "se"}, "n": 500}"#,
    );
    let read = |out: &Path| fs::read(out.join("traces.csv")).unwrap();
    let base = dir.path().join("base");
    covband(&["run", "--spec", &spec, "--out", base.to_str().unwrap()]);
    let env_out = dir.path().join("env");
    let o = Command::new(env!("CARGO_BIN_EXE_covband"))
        .args(["run", "--spec", &spec, "--out", env_out.to_str().unwrap()])
        .env("COVBAND_SEED", "42")
        .output()
        .unwrap();
    assert!(o.status.success());
    let flag = dir.path().join("flag");
    covband(&["run", "--spec", &spec, "--out", flag.to_str().unwrap(), "--seed", "42", "--reps", "1"]);
    assert_ne!(read(&base), read(&env_out));
    assert_eq!(read(&env_out), read(&flag));
}

#[test]
fn json_trace_format() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "run.json", RUN);
    let out = dir.path().join("out");
    let o = covband(&["run", "--spec", &spec, "--out", out.to_str().unwrap(), "--format", "json"]);
    assert!(o.status.success());
    let traces: Value = serde_json::from_str(&fs::read_to_string(out.join("traces.json")).unwrap()).unwrap();
    assert_eq!(traces.as_array().unwrap().len(), 3);
    assert_eq!(traces[0]["run_id"], "abse");
}

#[test]
fn abse_below_k_ln_k_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "bad.json",
        r#"{"machine": {"family": "proposition", "params": {"alpha": 1.0, "L": 1.0}, "d": 1, "K": 3},
            "policy": {"policy": "abse"}, "n": 2}"#,
    );
    let o = covband(&["run", "--spec", &spec, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("K ln K"));
}

#[test]
fn malformed_spec_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "bad.json", r#"{"machine": {"family": "nope", "K": 2}, "policy": {"policy": "se"}, "n": 10}"#);
    let o = covband(&["run", "--spec", &spec, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = covband(&["run", "--spec", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_reports_fit() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "sweep.json",
        r#"{"machine": {"family": "proposition", "params": {"alpha": 1.0, "L": 1.0}, "d": 1, "K": 2},
            "policies": [{"policy": "bse"}, {"policy": "abse"}],
            "n_values": [512, 1024, 2048, 4096, 8192], "reps": 2}"#,
    );
    let out = dir.path().join("out");
    let o = covband(&["sweep", "--spec", &spec, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let series = summary["series"].as_array().unwrap();
    assert_eq!(series.len(), 2);
    for s in series {
        assert!(s["fit"]["slope"].is_f64());
        assert_eq!(s["points"].as_array().unwrap().len(), 5);
    }
    assert!((summary["reference_slope"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    let csv = fs::read_to_string(out.join("traces.csv")).unwrap();
    assert!(csv.contains("bse-n512,") && csv.contains("abse-n8192,"));
}

#[test]
fn check_exit_codes() {
    assert_eq!(covband(&["check", "unknown"]).status.code(), Some(2));
    let o = covband(&["check", "lemma"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("[PASS] criterion 3"));
}
