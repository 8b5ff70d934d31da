//! End-to-end runs of the `sfa` binary.

use std::path::Path;
use std::process::{Command, Output};

fn sfa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfa")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn verify_succeeds() {
    let out = sfa(&["verify"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(!String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        vec!["--frobnicate"],
        vec![],
        vec!["simulate", "--dgp", "nope"],
        vec!["experiment", "table-9"],
        vec!["fit", "--data", "/nonexistent.csv", "--family", "exponential"],
    ] {
        let out = sfa(&args);
        assert_eq!(code(&out), 1, "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn help_exits_zero() {
    assert_eq!(code(&sfa(&["--help"])), 0);
}

#[test]
fn simulate_is_byte_identical() {
    let a = sfa(&["simulate", "--dgp", "mean-te", "--seed", "7"]);
    let b = sfa(&["simulate", "--dgp", "mean-te", "--seed", "7"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let c = sfa(&["simulate", "--dgp", "mean-te", "--seed", "8"]);
    assert_ne!(a.stdout, c.stdout);
    assert_eq!(String::from_utf8_lossy(&a.stdout).lines().count(), 1001);
}

#[test]
fn simulate_writes_only_into_out() {
    let dir = tempfile::tempdir().unwrap();
    let out = sfa(&["simulate", "--dgp", "obs-te", "--seed", "3", "--out", path(dir.path())]);
    assert_eq!(code(&out), 0);
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["obs-te_3.csv", "obs-te_3.json"]);
}

#[test]
fn fit_predict_margins_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = path(dir.path());
    let sim = sfa(&["simulate", "--dgp", "generic", "--family", "half-normal", "--n", "800", "--seed", "4", "--out", d]);
    assert_eq!(code(&sim), 0);
    let data = dir.path().join("generic_4.csv");
    let fitted = sfa(&["fit", "--data", path(&data), "--family", "half-normal", "--out", d]);
    assert_eq!(code(&fitted), 0, "{}", String::from_utf8_lossy(&fitted.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    assert_eq!(report["result"]["converged"], true);
    assert_eq!(report["standard_errors"]["status"], "available");
    let efficiency = std::fs::read_to_string(dir.path().join("efficiency.csv")).unwrap();
    assert_eq!(efficiency.lines().count(), 801);

    let fit_json = dir.path().join("fit.json");
    let predicted = sfa(&["predict", "--data", path(&data), "--params", path(&fit_json)]);
    assert_eq!(code(&predicted), 0);
    // Predictions at the estimate reproduce the table written by `fit`.
    assert_eq!(String::from_utf8_lossy(&predicted.stdout), efficiency);

    let margins = sfa(&["margins", "--data", path(&data), "--params", path(&fit_json), "--format", "json"]);
    assert_eq!(code(&margins), 0);
    let rows: serde_json::Value = serde_json::from_slice(&margins.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 800);
}

#[test]
fn iteration_limit_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = path(dir.path());
    assert_eq!(code(&sfa(&["simulate", "--dgp", "obs-te", "--seed", "1", "--out", d])), 0);
    let data = dir.path().join("obs-te_1.csv");
    let out = sfa(&[
        "fit", "--data", path(&data), "--family", "exponential", "--max-iterations", "5", "--restarts", "0", "--out", d,
    ]);
    assert_eq!(code(&out), 2);
    assert!(dir.path().join("fit.json").exists());
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"dgp": "mean-te", "seed": 7}"#).unwrap();
    let from_config = sfa(&["--config", path(&cfg), "simulate"]);
    let from_flags = sfa(&["simulate", "--dgp", "mean-te", "--seed", "7"]);
    assert_eq!(from_config.stdout, from_flags.stdout);
    let overridden = sfa(&["--config", path(&cfg), "simulate", "--seed", "8"]);
    assert_ne!(overridden.stdout, from_config.stdout);
    std::fs::write(&cfg, r#"{"sead": 7}"#).unwrap();
    assert_eq!(code(&sfa(&["--config", path(&cfg), "verify"])), 1);
}

#[test]
fn experiment_writes_per_seed_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = sfa(&["experiment", "identifiability", "--seeds", "1..2", "--out", path(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["identifiability_1.json", "identifiability_2.json", "identifiability_summary.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("identifiability_1.json")).unwrap()).unwrap();
    let correlations = r["scalars"]
        .as_object()
        .unwrap()
        .keys()
        .filter(|k| k.starts_with("spearman_"))
        .count();
    assert_eq!(correlations, 6);
}
