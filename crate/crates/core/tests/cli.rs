use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dtrbal::harness::{parse_table, ExperimentConfig};

fn dtrbal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtrbal"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn shipped_config_is_the_default_experiment() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml");
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}

#[test]
fn simulate_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let data = data.to_str().unwrap();
    stdout(&dtrbal(&["simulate", "--horizon", "2", "--n", "60", "--seed", "3", "--out", data]));
    let text = fs::read_to_string(data).unwrap();
    assert!(text.starts_with("traj_id,t,x_1,x_2,action,reward"));
    assert_eq!(text.lines().count(), 1 + 60 * 2);

    let out = stdout(&dtrbal(&["evaluate", "--data", data, "--estimators", "ipw,nipw,balanced", "--kernel", "gaussian"]));
    for label in ["ipw", "nipw", "bal_gaussian"] {
        assert!(out.lines().any(|l| l.starts_with(label)), "missing {label} in\n{out}");
    }

    // Target equal to logging reproduces the sample mean for every IPW variant.
    let out = stdout(&dtrbal(&["evaluate", "--data", data, "--target", "logging", "--estimators", "ipw,ipw_T,nipw_T"]));
    let values: Vec<&str> = out.lines().skip(1).filter_map(|l| l.split_whitespace().nth(1)).collect();
    assert_eq!(values.len(), 3, "{out}");
    assert!(values.windows(2).all(|w| w[0] == w[1]), "{out}");
}

#[test]
fn run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("r");
    let out = stdout(&dtrbal(&[
        "run",
        "--horizon",
        "2",
        "--n",
        "80",
        "--replications",
        "3",
        "--rollouts",
        "5000",
        "--estimators",
        "ipw,nipw,balanced",
        "--kernel",
        "matern52",
        "--workers",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert!(out.contains("oracle value"), "{out}");
    let table = parse_table(fs::File::open(out_dir.join("summary.csv")).unwrap()).unwrap();
    let labels: Vec<&str> = table.iter().map(|r| r.estimator.as_str()).collect();
    assert_eq!(labels, ["ipw", "nipw", "bal_matern52"]);
    let records = fs::read_to_string(out_dir.join("replications.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 3 * 3);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["replications"], 3);
}

#[test]
fn oracle_prints_value() {
    let out = stdout(&dtrbal(&["oracle", "--horizon", "1", "--rollouts", "2000", "--workers", "1"]));
    assert!(out.contains("±"), "{out}");
}

#[test]
fn errors_exit_nonzero_with_a_diagnostic() {
    let o = dtrbal(&["evaluate", "--data", "/nonexistent.csv"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent.csv"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "replications = 2\nreplicatoins = 3\n").unwrap();
    let o = dtrbal(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("replicatoins"));

    let o = dtrbal(&["run", "--estimators", "nope", "--replications", "1"]);
    assert!(!o.status.success());
}
