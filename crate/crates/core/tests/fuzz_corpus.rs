//! Replays the checked-in fuzz seeds through the same checks as the fuzz
//! targets, so the parsers stay covered on stable toolchains.

use std::fs;
use std::path::PathBuf;

use hinfsearch::experiment::ExperimentConfig;
use hinfsearch::problem::{parse_matrix, Problem};
use hinfsearch::solvers::IterationTrace;

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|entry| {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, fs::read_to_string(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn problem_seeds() {
    let mut parsed = 0;
    for (name, text) in seeds("problem_json") {
        if let Ok(p) = Problem::from_json(&text) {
            assert_eq!(Problem::from_json(&p.to_json()).unwrap(), p, "{name}");
            parsed += 1;
        }
    }
    assert!(parsed >= 2);
}

#[test]
fn config_seeds() {
    for (name, text) in seeds("experiment_config") {
        let cfg = ExperimentConfig::from_json(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(again.to_json(), cfg.to_json(), "{name}");
    }
}

#[test]
fn trace_seeds() {
    for (name, text) in seeds("trace_csv") {
        let trace = IterationTrace::from_csv(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(IterationTrace::from_csv(&trace.to_csv()).unwrap(), trace, "{name}");
    }
}

#[test]
fn gain_seeds() {
    let ok = seeds("gain_matrix")
        .iter()
        .filter(|(_, text)| parse_matrix("gain", text).is_ok())
        .count();
    assert_eq!(ok, 2);
}
