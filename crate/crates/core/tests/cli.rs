use std::fs;
use std::path::Path;
use std::process::Command;

use strange_reservoir::experiments::ExperimentResult;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_strange-reservoir"));
    c.env_remove("STRANGE_RESERVOIR_SEED");
    c
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn report(dir: &Path, name: &str) -> ExperimentResult {
    serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn passing_run_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["reconstruct", "--config", &config("rossler.json"), "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    assert!(dir.path().join("rossler_projected.csv").exists());
}

#[test]
fn metric_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["forecast", "--config", &config("forecast.json"), "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!report(dir.path(), "forecast_report.json").passed());
}

#[test]
fn errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = bin()
        .args(["reconstruct", "--config", "/nonexistent/config.json"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));

    let mismatched = bin()
        .args(["vdp-sweep", "--config", &config("rossler.json"), "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(mismatched.status.code(), Some(1));

    let bad_json = dir.path().join("bad.json");
    fs::write(&bad_json, r#"{"experiment": "reconstruct", "unknown_field": 1}"#).unwrap();
    let bad = bin().args(["reconstruct", "--config"]).arg(&bad_json).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));

    let bad_env = bin()
        .env("STRANGE_RESERVOIR_SEED", "not-a-seed")
        .args(["reconstruct", "--config", &config("rossler.json"), "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(bad_env.status.code(), Some(1));
}

#[test]
fn seed_precedence_is_flag_then_env_then_config() {
    let dir = tempfile::tempdir().unwrap();
    let run = |env: Option<&str>, flag: Option<&str>, sub: &str| {
        let out_dir = dir.path().join(sub);
        let mut c = bin();
        c.args(["reconstruct", "--config", &config("lorenz.json"), "--out-dir"]).arg(&out_dir);
        if let Some(e) = env {
            c.env("STRANGE_RESERVOIR_SEED", e);
        }
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        assert_eq!(c.output().unwrap().status.code(), Some(0));
        report(&out_dir, "lorenz_report.json").config.seed
    };
    assert_eq!(run(None, None, "a"), 0);
    assert_eq!(run(Some("7"), None, "b"), 7);
    assert_eq!(run(Some("7"), Some("9"), "c"), 9);
}

#[test]
fn diagnose_writes_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["diagnose", "--config", &config("rossler.json"), "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(matches!(out.status.code(), Some(0) | Some(2)));
    let bundle: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("rossler_diagnostics.json")).unwrap()).unwrap();
    let checks: Vec<&str> = bundle.as_array().unwrap().iter().map(|r| r["check"].as_str().unwrap()).collect();
    assert_eq!(checks, ["reachability", "echo_state_property", "immersion_rank", "injectivity"]);
}

#[test]
fn paper_preset_leaves_reconstruction_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    for preset in ["desk", "paper"] {
        let out = bin()
            .args(["reconstruct", "--preset", preset, "--config", &config("lorenz.json"), "--out-dir"])
            .arg(dir.path().join(preset))
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
    }
    let read = |p: &str| fs::read(dir.path().join(p).join("lorenz_states.csv")).unwrap();
    assert_eq!(read("desk"), read("paper"));
}
