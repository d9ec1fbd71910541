//! Experiment configuration and the runner that writes traces and summaries.
//!
//! A configuration is a JSON object. Every field is optional except `seed`
//! and exactly one of `problem` and `generate`:
//!
//! ```json
//! {"problem": "data/example13.json", "algorithm": "gs", "seed": 0,
//!  "out": "runs/gs", "gs": {"max_iters": 500}}
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{HinfError, Result};
use crate::hinf::oracle::{AnalyticGradient, ExactCost};
use crate::lti::{Plant, Policy};
use crate::modelfree::{solve_ns_modelfree, EstimatorConfig};
use crate::problem::{gen_random_problem, matrix_to_rows, Problem};
use crate::solvers::{
    solve_goldstein, solve_gs, solve_ingd, solve_ns, GoldsteinConfig, GsConfig, IngdConfig, IterationTrace, NsConfig,
    Status,
};

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Goldstein,
    #[default]
    Gs,
    Ns,
    Ingd,
    NsModelfree,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Goldstein,
        Algorithm::Gs,
        Algorithm::Ns,
        Algorithm::Ingd,
        Algorithm::NsModelfree,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Goldstein => "goldstein",
            Algorithm::Gs => "gs",
            Algorithm::Ns => "ns",
            Algorithm::Ingd => "ingd",
            Algorithm::NsModelfree => "ns-modelfree",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = HinfError;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| HinfError::Argument(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n_x: usize,
    pub n_u: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: Option<PathBuf>,
    pub generate: Option<GeneratorSpec>,
    pub algorithm: Algorithm,
    /// Overrides the seed inside the algorithm block.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Overrides the problem file's `J_star`.
    pub j_star: Option<f64>,
    /// Log wall-clock time per row. Off by default so that traces are
    /// byte-for-byte reproducible.
    pub record_time: bool,
    pub goldstein: GoldsteinConfig,
    pub gs: GsConfig,
    pub ns: NsConfig,
    pub ingd: IngdConfig,
    pub estimator: EstimatorConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HinfError::Parse {
            field: "config".into(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.problem, &self.generate) {
            (Some(_), Some(_)) => return Err(HinfError::Argument("give either `problem` or `generate`, not both".into())),
            (None, None) => return Err(HinfError::Argument("no problem source: set `problem` or `generate`".into())),
            _ => {}
        }
        if self.seed.is_none() {
            return Err(HinfError::Argument("`seed` is mandatory".into()));
        }
        if let Some(j) = self.j_star {
            if !(j.is_finite() && j > 0.0) {
                return Err(HinfError::Argument("`j_star` must be a positive finite number".into()));
            }
        }
        Ok(())
    }

    /// Copy with the seed and timing flag pushed into every algorithm block.
    pub fn resolved(&self) -> Result<Self> {
        self.validate()?;
        let seed = self.seed.expect("validated");
        let mut cfg = self.clone();
        cfg.goldstein.seed = seed;
        cfg.gs.seed = seed;
        cfg.ns.seed = seed;
        cfg.ingd.seed = seed;
        cfg.goldstein.record_time = self.record_time;
        cfg.gs.record_time = self.record_time;
        cfg.ns.record_time = self.record_time;
        cfg.ingd.record_time = self.record_time;
        Ok(cfg)
    }
}

/// Problem data after loading or generation.
#[derive(Debug, Clone)]
pub struct Instance {
    pub name: String,
    pub plant: Plant,
    pub k0: Policy,
    pub j_star: Option<f64>,
}

pub fn load_instance(cfg: &ExperimentConfig) -> Result<Instance> {
    cfg.validate()?;
    let mut inst = if let Some(path) = &cfg.problem {
        let p = Problem::load(path)?;
        let k0 = p.k0.ok_or_else(|| HinfError::Parse {
            field: "K0".into(),
            message: "the problem file has no initial gain".into(),
        })?;
        Instance {
            name: p.name.unwrap_or_else(|| path.display().to_string()),
            plant: p.plant,
            k0,
            j_star: p.j_star,
        }
    } else {
        let spec = cfg.generate.expect("validated");
        let g = gen_random_problem(spec.n_x, spec.n_u, spec.seed)?;
        Instance {
            name: format!("random-{}x{}-{}", spec.n_x, spec.n_u, spec.seed),
            plant: g.plant,
            k0: g.k0,
            j_star: None,
        }
    };
    if cfg.j_star.is_some() {
        inst.j_star = cfg.j_star;
    }
    Ok(inst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub problem: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub final_cost: f64,
    pub rel_err: Option<f64>,
    pub iterations: usize,
    pub oracle_calls: usize,
    pub wall_time_s: f64,
    pub status: Status,
    pub final_gain: Vec<Vec<f64>>,
    pub metadata: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub policy: Policy,
    pub trace: IterationTrace,
    pub summary: Summary,
    pub j_star: Option<f64>,
}

impl Outcome {
    pub fn success(&self) -> bool {
        self.summary.status.is_success()
    }
}

/// Runs one solver on the configured instance with the search-grid oracles.
pub fn solve_instance(inst: &Instance, cfg: &ExperimentConfig) -> Result<(Policy, IterationTrace)> {
    let cost = ExactCost::search(inst.plant.clone());
    let grad = AnalyticGradient::search(inst.plant.clone());
    let (plant, k0) = (&inst.plant, &inst.k0);
    match cfg.algorithm {
        Algorithm::Goldstein => solve_goldstein(plant, k0, &cfg.goldstein, &cost, &grad),
        Algorithm::Gs => solve_gs(plant, k0, &cfg.gs, &cost, &grad),
        Algorithm::Ns => solve_ns(plant, k0, &cfg.ns, &cost),
        Algorithm::Ingd => solve_ingd(plant, k0, &cfg.ingd, &cost, &grad),
        Algorithm::NsModelfree => solve_ns_modelfree(plant, k0, &cfg.ns, &cfg.estimator),
    }
}

/// Loads the instance, runs the solver and, if `out` is set, writes the
/// trace, the summary and the resolved configuration there.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    let cfg = cfg.resolved()?;
    let inst = load_instance(&cfg)?;
    let start = Instant::now();
    let (policy, trace) = solve_instance(&inst, &cfg)?;
    let wall = start.elapsed().as_secs_f64();

    let final_cost = trace.final_cost().unwrap_or(f64::NAN);
    let summary = Summary {
        problem: inst.name.clone(),
        algorithm: cfg.algorithm,
        seed: cfg.seed.expect("resolved"),
        final_cost,
        rel_err: inst.j_star.map(|js| (final_cost - js) / js),
        iterations: trace.records.last().map_or(0, |r| r.n),
        oracle_calls: trace.total_oracle_calls(),
        wall_time_s: wall,
        status: trace.status,
        final_gain: matrix_to_rows(policy.gain()),
        metadata: trace.metadata.clone(),
    };
    let outcome = Outcome {
        policy,
        trace,
        summary,
        j_star: inst.j_star,
    };
    if let Some(dir) = &cfg.out {
        write_outputs(dir, &cfg, &outcome)?;
    }
    Ok(outcome)
}

fn io_error(path: &Path, e: std::io::Error) -> HinfError {
    HinfError::Argument(format!("cannot write {}: {e}", path.display()))
}

pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, outcome: &Outcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let trace_path = dir.join(TRACE_FILE);
    let mut csv = Vec::new();
    outcome
        .trace
        .write_csv_with_reference(&mut csv, outcome.j_star)
        .expect("writing to a Vec cannot fail");
    fs::write(&trace_path, csv).map_err(|e| io_error(&trace_path, e))?;
    let summary_path = dir.join(SUMMARY_FILE);
    let summary = serde_json::to_string_pretty(&outcome.summary).expect("summary serializes");
    fs::write(&summary_path, summary + "\n").map_err(|e| io_error(&summary_path, e))?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_json() + "\n").map_err(|e| io_error(&config_path, e))
}
