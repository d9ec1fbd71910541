//! Goldstein subgradient descent `K <- K - delta F / |F|` with `F` the
//! sampled min-norm element of the Goldstein subdifferential.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_start, push_final, reached, try_cost, Clock, IterationTrace, Status, TraceRecord, MAX_LOCAL_SHRINKS};
use crate::bundle::sample_bundle;
use crate::error::{HinfError, Result};
use crate::hinf::oracle::{CostOracle, Counted, GradientOracle};
use crate::lti::{Plant, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldsteinMode {
    /// `delta_n = c * delta0_hat / (n + 1)`.
    Diminishing,
    /// `delta_n = delta`.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoldsteinConfig {
    pub mode: GoldsteinMode,
    pub c: f64,
    pub delta: f64,
    pub delta0_hat: f64,
    /// Bundle size; `None` means `n_x * n_u + 1`.
    pub m: Option<usize>,
    pub max_iters: usize,
    pub tol_f: f64,
    pub seed: u64,
    pub target_cost: Option<f64>,
    pub record_time: bool,
    /// Wall-clock budget; the run stops with `iteration_cap` once spent.
    pub time_limit_s: Option<f64>,
}

impl Default for GoldsteinConfig {
    fn default() -> Self {
        Self {
            mode: GoldsteinMode::Diminishing,
            c: 0.5,
            delta: 0.01,
            delta0_hat: 0.02,
            m: None,
            max_iters: 2000,
            tol_f: 1e-6,
            seed: 0,
            target_cost: None,
            record_time: true,
            time_limit_s: None,
        }
    }
}

impl GoldsteinConfig {
    pub fn validate(&self, plant: &Plant) -> Result<usize> {
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(HinfError::Argument(format!("c must lie in (0, 1), got {}", self.c)));
        }
        if !(self.delta > 0.0) || !(self.delta0_hat > 0.0) {
            return Err(HinfError::Argument("delta and delta0_hat must be positive".into()));
        }
        if !(self.tol_f >= 0.0) {
            return Err(HinfError::Argument("tol_f must be nonnegative".into()));
        }
        bundle_size(self.m, plant)
    }
}

pub(crate) fn bundle_size(m: Option<usize>, plant: &Plant) -> Result<usize> {
    let min = plant.policy_dim() + 1;
    match m {
        None => Ok(min),
        Some(m) if m >= min => Ok(m),
        Some(m) => Err(HinfError::Argument(format!("bundle size m={m} below n_x*n_u+1={min}"))),
    }
}

pub fn solve_goldstein<C, G>(
    plant: &Plant,
    k0: &Policy,
    cfg: &GoldsteinConfig,
    cost: &C,
    grad: &G,
) -> Result<(Policy, IterationTrace)>
where
    C: CostOracle + ?Sized,
    G: GradientOracle + ?Sized,
{
    check_start(plant, k0)?;
    let m = cfg.validate(plant)?;
    let cost = Counted::new(cost);
    let grad = Counted::new(grad);
    let calls = || cost.calls() + grad.calls();
    let clock = Clock::new(cfg.record_time, cfg.time_limit_s);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = IterationTrace::new();
    trace.note("algorithm", "goldstein");

    let mut k = k0.gain().clone();
    let mut j = cost.cost(&k)?;
    let mut delta_hat = cfg.delta0_hat;

    for n in 0..cfg.max_iters {
        if clock.exhausted() {
            trace.note("stop_reason", "time limit");
            break;
        }
        if reached(cfg.target_cost, j) {
            trace.status = Status::Converged;
            break;
        }
        let mut delta = match cfg.mode {
            GoldsteinMode::Diminishing => cfg.c * delta_hat / (n + 1) as f64,
            GoldsteinMode::Constant => cfg.delta,
        };
        let mut f_norm = f64::NAN;
        let mut step = 0.0;
        let mut next = None;
        let mut infeasible = 0;
        let mut shrinks = 0;
        let mut resolved = false;
        while shrinks <= MAX_LOCAL_SHRINKS {
            let bundle = match sample_bundle(&grad, &k, delta, m, &mut rng) {
                Ok(b) => b,
                Err(HinfError::InfeasibleBall { .. }) => {
                    infeasible += 1;
                    if cfg.mode == GoldsteinMode::Diminishing {
                        delta_hat *= 0.5;
                    }
                    delta *= 0.5;
                    shrinks += 1;
                    continue;
                }
                Err(HinfError::RedrawLimit { .. }) => {
                    resolved = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            f_norm = bundle.min_norm_value();
            if f_norm <= cfg.tol_f {
                break;
            }
            let candidate = &k - &bundle.min_norm * (delta / f_norm);
            if let Some(jc) = try_cost(&cost, &candidate)? {
                if jc <= j {
                    step = delta;
                    next = Some((candidate, jc));
                    break;
                }
            }
            delta *= 0.5;
            shrinks += 1;
        }

        trace.records.push(TraceRecord {
            n,
            cost: j,
            f_norm,
            delta,
            eps: cfg.tol_f,
            step,
            oracle_calls: calls(),
            elapsed_s: clock.elapsed(),
            gain: Some(k.clone()),
        });
        if resolved {
            trace.status = Status::Converged;
            trace.note("stop_reason", "radius below kink resolution");
            return Ok((Policy::new(k), trace));
        }
        if infeasible > MAX_LOCAL_SHRINKS {
            trace.status = Status::InfeasibleAbort;
            return Ok((Policy::new(k), trace));
        }
        if f_norm <= cfg.tol_f {
            trace.status = Status::StationaryTarget;
            return Ok((Policy::new(k), trace));
        }
        if let Some((kn, jn)) = next {
            k = kn;
            j = jn;
        }
    }

    push_final(&mut trace, &k, j, cfg.tol_f, calls(), clock.elapsed());
    Ok((Policy::new(k), trace))
}
