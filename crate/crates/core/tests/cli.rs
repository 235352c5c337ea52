use std::fs;
use std::process::Command;

use lasso_oracle::bounds::{BoundConstants, TheoremId, DEFAULT_SEARCH_CAP};
use lasso_oracle::harness::{canonical_logistic, RunConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lasso-oracle"))
}

fn write_config(dir: &std::path::Path) -> std::path::PathBuf {
    let cfg = RunConfig {
        scenario: canonical_logistic(200, 8).unwrap().with_eta(3.0),
        constants: BoundConstants::estimated_default(),
        theorem: TheoremId::EstimatedDefault,
        lambda_bar: None,
        t: Some(1.0),
        reps: 20,
        seed: 9,
        s_max: 2,
        search_cap: DEFAULT_SEARCH_CAP,
    };
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn run_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    for (tag, threads) in [("a", "1"), ("b", "4")] {
        let st = bin()
            .args(["run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(dir.path().join(tag))
            .args(["--threads", threads])
            .status()
            .unwrap();
        assert!(st.success());
    }
    for f in ["results.csv", "summary.json", "plots.svg"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        assert!(!a.is_empty());
        if f != "plots.svg" {
            assert_eq!(a, fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
        }
    }
    let csv = fs::read_to_string(dir.path().join("a/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn certify_prints_certificate_json() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = bin().args(["certify", "--config"]).arg(&config).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["theorem_id"], "2.2");
    assert!(v["alpha"].as_f64().unwrap() < 1.0);
}

#[test]
fn lab_omega_passes_and_appends() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("lab.csv");
    let st = bin()
        .args(["lab", "--check", "omega", "--n", "100", "--m", "8", "--reps", "500", "--append"])
        .arg(&csv)
        .status()
        .unwrap();
    assert!(st.success());
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 2);
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{\"unknown\": 1}").unwrap();
    let out = bin().args(["certify", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}
