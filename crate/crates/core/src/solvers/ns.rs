//! Non-derivative sampling: gradient sampling with Gupal estimates in place
//! of gradients, so only cost evaluations are needed.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::goldstein::bundle_size;
use super::{check_start, push_final, reached, row, try_cost, Clock, IterationTrace, Status, MAX_LOCAL_SHRINKS};
use crate::bundle::{min_norm_point, sample_bundle_with};
use crate::error::{HinfError, Result};
use crate::hinf::gradient::gupal_chi;
use crate::hinf::oracle::{CostOracle, Counted};
use crate::lti::{Plant, Policy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NsConfig {
    pub delta0: f64,
    pub eps0: f64,
    pub mu_delta: f64,
    pub mu_eps: f64,
    /// Bundle size; `None` means `n_x * n_u + 1`.
    pub m: Option<usize>,
    pub beta: f64,
    /// Line-search floor `t_lower`.
    pub t_floor: f64,
    /// Line-search shrink factor.
    pub kappa: f64,
    /// Mollifier schedule `alpha_n = alpha0 / (n + 1)`.
    pub alpha0: f64,
    pub max_iters: usize,
    pub delta_opt: f64,
    pub eps_opt: f64,
    pub seed: u64,
    pub target_cost: Option<f64>,
    pub record_time: bool,
    /// Wall-clock budget; the run stops with `iteration_cap` once spent.
    pub time_limit_s: Option<f64>,
}

impl Default for NsConfig {
    fn default() -> Self {
        Self {
            delta0: 0.01,
            eps0: 100.0,
            mu_delta: 0.5,
            mu_eps: 0.5,
            m: None,
            beta: 0.5,
            t_floor: 1e-6,
            kappa: 0.9,
            alpha0: 0.1,
            max_iters: 2000,
            delta_opt: 0.0,
            eps_opt: 0.0,
            seed: 0,
            target_cost: None,
            record_time: true,
            time_limit_s: None,
        }
    }
}

impl NsConfig {
    pub fn validate(&self, plant: &Plant) -> Result<usize> {
        let unit_open = |v: f64| v > 0.0 && v < 1.0;
        let unit_closed = |v: f64| v > 0.0 && v <= 1.0;
        if !(self.delta0 > 0.0) || !(self.eps0 >= 0.0) {
            return Err(HinfError::Argument("delta0 must be positive and eps0 nonnegative".into()));
        }
        if !unit_closed(self.mu_delta) || !unit_closed(self.mu_eps) {
            return Err(HinfError::Argument("reduction factors must lie in (0, 1]".into()));
        }
        if !unit_open(self.beta) || !unit_open(self.t_floor) || !unit_open(self.kappa) {
            return Err(HinfError::Argument("beta, t_floor and kappa must lie in (0, 1)".into()));
        }
        if !unit_open(self.alpha0) {
            return Err(HinfError::Argument("alpha0 must lie in (0, 1)".into()));
        }
        if !(self.delta_opt >= 0.0) || !(self.eps_opt >= 0.0) {
            return Err(HinfError::Argument("stop targets must be nonnegative".into()));
        }
        bundle_size(self.m, plant)
    }
}

pub fn solve_ns<C>(plant: &Plant, k0: &Policy, cfg: &NsConfig, cost: &C) -> Result<(Policy, IterationTrace)>
where
    C: CostOracle + ?Sized,
{
    check_start(plant, k0)?;
    let m = cfg.validate(plant)?;
    let cost = Counted::new(cost);
    let clock = Clock::new(cfg.record_time, cfg.time_limit_s);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = IterationTrace::new();
    trace.note("algorithm", "ns");

    let mut k = k0.gain().clone();
    let mut j = cost.cost(&k)?;
    let (mut delta, mut eps) = (cfg.delta0, cfg.eps0);
    let (rows, cols) = k.shape();

    for n in 0..cfg.max_iters {
        if clock.exhausted() {
            trace.note("stop_reason", "time limit");
            break;
        }
        if reached(cfg.target_cost, j) || (delta <= cfg.delta_opt && eps <= cfg.eps_opt) {
            trace.status = Status::Converged;
            break;
        }
        let alpha = cfg.alpha0 / (n + 1) as f64;

        let mut radius = delta;
        let mut sampled = None;
        for _ in 0..=MAX_LOCAL_SHRINKS {
            let probe = |p: &DMatrix<f64>, rng: &mut ChaCha8Rng| {
                let z = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-0.5..=0.5));
                gupal_chi(&cost, p, alpha, &z)
            };
            match sample_bundle_with(&k, radius, m, &mut rng, probe) {
                Ok(s) => {
                    sampled = Some(s);
                    break;
                }
                Err(HinfError::InfeasibleBall { .. }) => radius *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((_, estimates)) = sampled else {
            trace.records.push(row(n, j, f64::NAN, radius, eps, 0.0, cost.calls(), &clock, &k));
            trace.status = Status::InfeasibleAbort;
            return Ok((Policy::new(k), trace));
        };
        let (f, _) = min_norm_point(&estimates)?;
        let f_norm = f.norm();

        if f_norm <= eps {
            trace.records.push(row(n, j, f_norm, delta, eps, 0.0, cost.calls(), &clock, &k));
            delta *= cfg.mu_delta;
            eps *= cfg.mu_eps;
            continue;
        }

        let direction = &f / f_norm;
        let t_min = cfg.t_floor.min(cfg.kappa * radius / 3.0);
        let mut t = radius;
        let mut accepted = None;
        loop {
            let trial = &k - &direction * t;
            if let Some(jt) = try_cost(&cost, &trial)? {
                if jt <= j - cfg.beta * t * f_norm {
                    accepted = Some((trial, jt));
                    break;
                }
            }
            if cfg.kappa * t < t_min {
                break;
            }
            t *= cfg.kappa;
        }
        match accepted {
            Some((trial, jt)) => {
                trace.records.push(row(n, j, f_norm, radius, eps, t, cost.calls(), &clock, &k));
                k = trial;
                j = jt;
            }
            None => trace.records.push(row(n, j, f_norm, radius, eps, 0.0, cost.calls(), &clock, &k)),
        }
    }

    push_final(&mut trace, &k, j, eps, cost.calls(), clock.elapsed());
    Ok((Policy::new(k), trace))
}
