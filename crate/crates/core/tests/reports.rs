use std::process::Command;

use wz_she_lab::experiments::{report_with_workers, run_experiment, ExperimentConfig, ExperimentReport};

fn small(name: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::for_experiment(name).unwrap().quick();
    c.seed = 99;
    c
}

#[test]
fn reports_are_identical_across_worker_counts() {
    for name in ["tanaka", "solver", "functionals"] {
        let mut c = small(name);
        c.solver.fk_paths = 500;
        c.solver.probes = vec![0.0];
        let one = report_with_workers(&c, 1).unwrap();
        let three = report_with_workers(&c, 3).unwrap();
        assert_eq!(one, three, "{name}");
    }
}

#[test]
fn seed_changes_the_report() {
    let a = run_experiment(&small("tanaka")).unwrap();
    let mut c = small("tanaka");
    c.seed = 100;
    let b = run_experiment(&c).unwrap();
    assert_ne!(a.cells, b.cells);
    assert_ne!(a.config_hash, b.config_hash);
}

#[test]
fn report_json_round_trip() {
    let r = run_experiment(&small("tanaka")).unwrap();
    let back: ExperimentReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
    assert!(r.cells.iter().all(|c| c.exact || c.se.is_some()));
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wz-she-lab"))
}

#[test]
fn cli_lists_experiments() {
    let out = bin().args(["run", "--list"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 9);
    assert!(text.starts_with("constants"));
}

#[test]
fn cli_run_writes_report_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"tanaka": {"pairs": 64, "dt": 0.000244140625}}"#).unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["run", "tanaka", "--config"])
        .arg(&cfg)
        .args(["--seed", "7", "--out"])
        .arg(&out)
        .env("WZ_WORKERS", "2")
        .output()
        .unwrap();
    let report: ExperimentReport = serde_json::from_str(&std::fs::read_to_string(out.join("tanaka.json")).unwrap()).unwrap();
    assert_eq!(report.seed, 7);
    assert_eq!(status.status.success(), report.verdict.pass);
    assert!(out.join("tanaka.timing.json").exists());
    let csv = std::fs::read_to_string(out.join("tanaka_tanaka.csv")).unwrap();
    assert!(csv.starts_with("n,mean,se\n"));
}

#[test]
fn cli_rejects_bad_input() {
    let out = bin().args(["run", "nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["run", "tanaka"]).env("WZ_WORKERS", "zero").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_she_chaos_and_covariance_dump() {
    let out = bin().args(["she", "--t", "1", "--kmax", "12", "--method", "chaos"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let chaos = v["second_moment"]["value"].as_f64().unwrap();
    let closed = v["closed_form"].as_f64().unwrap();
    assert!((chaos - closed).abs() / closed < 0.01);

    let out = bin().arg("covariance").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("t,x,R"));
    assert_eq!(text.lines().count(), 1 + 41 * 81);
}
