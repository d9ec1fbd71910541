use std::fs;
use std::path::PathBuf;

use assert_cmd::Command;
use predicates::prelude::*;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn cli() -> Command {
    Command::cargo_bin("hinfsearch").unwrap()
}

fn value(stdout: &str, key: &str) -> f64 {
    stdout
        .split_whitespace()
        .find_map(|tok| tok.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {stdout}"))
        .parse()
        .unwrap()
}

#[test]
fn eval_prints_matching_grid_and_bisection_values() {
    let out = cli().args(["eval", "--problem"]).arg(data("example13.json")).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let grid = value(&text, "grid");
    let bisect = value(&text, "bisection");
    assert!((grid - bisect).abs() <= 1e-6, "{text}");
    assert!((value(&text, "rho") - 0.5756).abs() <= 1e-4);
}

#[test]
fn certify_scalar_loop() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scalar.json");
    fs::write(&path, r#"{"A": [[0.5]], "B": [[1.0]], "Q": [[1.0]], "R": [[1.0]], "K0": [[0.0]]}"#).unwrap();
    let out = cli().args(["certify", "--tol", "1e-8", "--problem"]).arg(&path).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!((value(&text, "bisection") - 2.0).abs() <= 2e-8, "{text}");
    assert!(value(&text, "bounded_real_max_eig") <= 1e-8);
}

#[test]
fn estimate_tracks_eval() {
    let out = cli()
        .args(["estimate", "-N", "100", "--problem"])
        .arg(data("example13.json"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let est = value(&text, "estimate");
    let grid = value(&text, "grid");
    assert!((est - grid).abs() <= 0.02 * grid, "{text}");
}

#[test]
fn unstable_gain_is_reported() {
    cli()
        .args(["eval", "--gain", "0,0,0", "--problem"])
        .arg(data("example13.json"))
        .assert()
        .failure()
        .stderr(predicate::str::contains("policy not stabilizing: rho="));
}

#[test]
fn ragged_problem_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"A": [[1.0, 0.0], [0.0]], "B": [[1.0], [0.0]], "Q": [[1.0, 0.0], [0.0, 1.0]], "R": [[1.0]], "K0": [[0.0, 0.0]]}"#).unwrap();
    cli()
        .args(["solve", "--seed", "0", "--problem"])
        .arg(&path)
        .assert()
        .failure()
        .stderr(predicate::str::contains("`A`"));
}

#[test]
fn missing_seed_is_rejected() {
    cli()
        .args(["solve", "--problem"])
        .arg(data("example13.json"))
        .assert()
        .failure()
        .stderr(predicate::str::contains("seed"));
}

#[test]
fn solve_writes_reproducible_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.json");
    fs::write(&config, r#"{"gs": {"max_iters": 20}}"#).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        cli()
            .args(["solve", "--algo", "gs", "--seed", "7", "--config"])
            .arg(&config)
            .arg("--problem")
            .arg(data("example13.json"))
            .arg("--out")
            .arg(&out)
            .assert()
            .code(2);
        out
    };
    let (a, b) = (run("a"), run("b"));
    let trace = fs::read_to_string(a.join("trace.csv")).unwrap();
    assert_eq!(trace, fs::read_to_string(b.join("trace.csv")).unwrap());
    assert!(trace.starts_with("n,J,Fnorm,delta,eps,t,oracle_calls,elapsed_s,rel_err\n"));
    assert!(trace.trim_end().ends_with("# status=iteration_cap"));
    for line in trace.lines().skip(1).filter(|l| !l.starts_with('#')) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!((cols[8] - (cols[1] - 7.3475) / 7.3475).abs() <= 1e-12);
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "iteration_cap");
    assert_eq!(summary["iterations"], 20);
    let config: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["gs"]["seed"], 7);
    assert_eq!(config["gs"]["max_iters"], 20);
}

#[test]
fn gen_round_trips_through_eval() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gen.json");
    cli()
        .args(["gen", "--nx", "3", "--nu", "1", "--seed", "5", "--out"])
        .arg(&path)
        .assert()
        .success();
    let first = fs::read_to_string(&path).unwrap();
    cli().args(["eval", "--problem"]).arg(&path).assert().success();
    let out = cli().args(["gen", "--nx", "3", "--nu", "1", "--seed", "5"]).output().unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), first);
}

#[test]
fn bench_runs_random_instances_with_thread_cap() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.json");
    fs::write(&config, r#"{"ns": {"max_iters": 10}}"#).unwrap();
    cli()
        .env("HINFSEARCH_THREADS", "2")
        .args(["bench", "--algo", "ns", "--runs", "3", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("bench"))
        .assert()
        .code(2);
    let table = fs::read_to_string(dir.path().join("bench/bench.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(dir.path().join("bench/run-2/trace.csv").exists());
    let dat = fs::read_to_string(dir.path().join("bench/bench.dat")).unwrap();
    assert!(dat.starts_with("# n J_1 J_2 J_3\n"));
}

#[test]
fn bad_thread_cap_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    cli()
        .env("HINFSEARCH_THREADS", "zero")
        .args(["bench", "--runs", "1", "--out"])
        .arg(dir.path())
        .assert()
        .failure()
        .stderr(predicate::str::contains("HINFSEARCH_THREADS"));
}
