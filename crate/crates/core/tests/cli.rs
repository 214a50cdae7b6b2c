use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ddp_core::cli::load_solution;
use ddp_core::experiments::ExperimentResult;
use tempfile::TempDir;

fn ddp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddp")).args(args).output().expect("ddp runs")
}

fn ddp_in(dir: &Path, args: &[&str]) -> Output {
    let mut all = vec!["--out-dir", dir.to_str().unwrap()];
    all.extend_from_slice(args);
    ddp(&all)
}

const SMALL: &[&str] = &[
    "--set",
    "experiment.replications=2",
    "--set",
    "experiment.n_schedule=[50,100,200]",
    "--set",
    "experiment.grid_size=20",
    "--set",
    "method.j=4",
];

#[test]
fn default_solve_writes_solution_and_log() {
    let tmp = TempDir::new().unwrap();
    let out = ddp_in(tmp.path(), &["solve"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sol = load_solution(&tmp.path().join("solution.json")).unwrap();
    assert!(sol.value(&[0.0]).unwrap().is_finite());
    let log = fs::read_to_string(tmp.path().join("iterations.csv")).unwrap();
    assert!(log.starts_with("iter,method,residual,wall_time_ms\n"));
    assert!(log.lines().count() > 2);
}

#[test]
fn invalid_discount_exits_with_config_error() {
    let tmp = TempDir::new().unwrap();
    let out = ddp_in(tmp.path(), &["solve", "--set", "model.beta=1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.beta"));
    assert!(!tmp.path().join("solution.json").exists());
}

#[test]
fn unknown_config_field_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.json");
    fs::write(&cfg, r#"{"model": {"beta": 0.9, "betta": 0.9}}"#).unwrap();
    let out = ddp_in(tmp.path(), &["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("betta"));
}

#[test]
fn self_approx_solution_has_one_value_per_draw() {
    let tmp = TempDir::new().unwrap();
    let out = ddp_in(tmp.path(), &["solve", "--method", "self-approx", "--n", "2000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("solution.json")).unwrap()).unwrap();
    assert_eq!(json["method"], "self-approx");
    assert_eq!(json["record"]["values"].as_array().unwrap().len(), 2000);
    let sol = load_solution(&tmp.path().join("solution.json")).unwrap();
    assert!(sol.value(&[123.4]).unwrap().is_finite());
}

#[test]
fn experiment_smoke_run_and_rates() {
    let tmp = TempDir::new().unwrap();
    let out = ddp_in(tmp.path(), &[&["experiment"], SMALL].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["records.csv", "rates.csv", "result.json", "pointwise_n50.csv", "pointwise_n200.csv"] {
        assert!(tmp.path().join(f).exists(), "{f} missing");
    }
    let result: ExperimentResult = serde_json::from_str(&fs::read_to_string(tmp.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(result.records.len(), 3);
    assert!(result.records.iter().all(|r| r.s == 2));
    assert_eq!(result.rates.len(), 3);

    let records = tmp.path().join("records.csv");
    let out = ddp(&["rates", records.to_str().unwrap(), "--statistic", "sup_sd"]);
    assert!(out.status.success());
    let fits: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(fits[0]["statistic"], "sup_sd");

    let out = ddp(&["rates", records.to_str().unwrap(), "--statistic", "nope"]);
    assert_eq!(out.status.code(), Some(4));
    let short = tmp.path().join("short.csv");
    fs::write(&short, "N,sup_sd\n100,0.1\n200,0.07\n").unwrap();
    assert_eq!(ddp(&["rates", short.to_str().unwrap()]).status.code(), Some(4));
}

#[test]
fn reruns_without_timings_are_byte_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for dir in [&a, &b] {
        let out = ddp_in(dir.path(), &[&["experiment", "--no-timings", "--seed", "7"], SMALL].concat());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 6);
    for name in names {
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap(), "{name:?} differs");
    }
}

#[test]
fn norm_check_reports_and_rejects() {
    let out = ddp(&["norm-check", "-k", "4", "-m", "64"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let norm: f64 = text.lines().next().unwrap().parse().unwrap();
    assert!((norm - 1.775).abs() < 1e-3);
    assert!(text.contains("possibly expansive"));
    assert_eq!(ddp(&["norm-check", "-k", "5", "-m", "3"]).status.code(), Some(2));
}

#[test]
fn exact_writes_reference_and_grid() {
    let tmp = TempDir::new().unwrap();
    let out = ddp_in(tmp.path(), &["exact", "--set", "experiment.grid_size=11"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let grid = fs::read_to_string(tmp.path().join("exact_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 12);
    assert!(tmp.path().join("exact.json").exists());
}
