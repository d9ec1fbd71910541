//! Gradient sampling with a trust-region line search.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::goldstein::bundle_size;
use super::{check_start, push_final, reached, try_cost, row, Clock, IterationTrace, Status, MAX_LOCAL_SHRINKS};
use crate::bundle::{min_norm_point, sample_ball, sample_bundle_with};
use crate::error::{HinfError, Result};
use crate::hinf::oracle::{CostOracle, Counted, GradientOracle};
use crate::lti::{Plant, Policy};

/// Trial steps `1, theta, theta^2, ...` tried before declaring a null step.
pub const LINE_SEARCH_CAP: usize = 200;
/// Draws allowed when relocating an iterate that landed on a kink.
pub const MAX_LANDING_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GsConfig {
    pub delta0: f64,
    pub eps0: f64,
    pub mu_delta: f64,
    pub mu_eps: f64,
    /// Bundle size; `None` means `n_x * n_u + 1`.
    pub m: Option<usize>,
    pub beta: f64,
    pub theta: f64,
    pub max_iters: usize,
    pub delta_opt: f64,
    pub eps_opt: f64,
    pub seed: u64,
    pub target_cost: Option<f64>,
    pub record_time: bool,
    /// Wall-clock budget; the run stops with `iteration_cap` once spent.
    pub time_limit_s: Option<f64>,
}

impl Default for GsConfig {
    fn default() -> Self {
        Self {
            delta0: 0.01,
            eps0: 100.0,
            mu_delta: 0.5,
            mu_eps: 0.5,
            m: None,
            beta: 0.5,
            theta: 0.9,
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

impl GsConfig {
    pub fn validate(&self, plant: &Plant) -> Result<usize> {
        let unit_open = |v: f64| v > 0.0 && v < 1.0;
        let unit_closed = |v: f64| v > 0.0 && v <= 1.0;
        if !(self.delta0 > 0.0) || !(self.eps0 >= 0.0) {
            return Err(HinfError::Argument("delta0 must be positive and eps0 nonnegative".into()));
        }
        if !unit_closed(self.mu_delta) || !unit_closed(self.mu_eps) {
            return Err(HinfError::Argument("reduction factors must lie in (0, 1]".into()));
        }
        if !unit_open(self.beta) || !unit_open(self.theta) {
            return Err(HinfError::Argument("beta and theta must lie in (0, 1)".into()));
        }
        if !(self.delta_opt >= 0.0) || !(self.eps_opt >= 0.0) {
            return Err(HinfError::Argument("stop targets must be nonnegative".into()));
        }
        bundle_size(self.m, plant)
    }
}

/// Gradient at `k`, or at a nearby differentiable point if `k` sits on a kink.
fn differentiable_start<G: GradientOracle + ?Sized>(
    grad: &G,
    k: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let radius = 1e-8 * (1.0 + k.norm());
    let mut point = k.clone();
    for _ in 0..=MAX_LANDING_DRAWS {
        match grad.gradient(&point) {
            Ok(g) => return Ok((point, g)),
            Err(HinfError::NonDifferentiable(_)) => point = sample_ball(k, radius, rng),
            Err(e) => return Err(e),
        }
    }
    Err(HinfError::Oracle("no differentiable point found near the initial policy".into()))
}

pub fn solve_gs<C, G>(plant: &Plant, k0: &Policy, cfg: &GsConfig, cost: &C, grad: &G) -> Result<(Policy, IterationTrace)>
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
    trace.note("algorithm", "gs");

    let (mut k, g0) = differentiable_start(&grad, k0.gain(), &mut rng)?;
    let mut center_grad = Some(g0);
    let mut j = cost.cost(&k)?;
    let (mut delta, mut eps) = (cfg.delta0, cfg.eps0);

    for n in 0..cfg.max_iters {
        if clock.exhausted() {
            trace.note("stop_reason", "time limit");
            break;
        }
        if reached(cfg.target_cost, j) || (delta <= cfg.delta_opt && eps <= cfg.eps_opt) {
            trace.status = Status::Converged;
            break;
        }

        let mut radius = delta;
        let mut sampled = None;
        for _ in 0..=MAX_LOCAL_SHRINKS {
            match sample_bundle_with(&k, radius, m, &mut rng, |p, _| grad.gradient(p)) {
                Ok(s) => {
                    sampled = Some(s);
                    break;
                }
                Err(HinfError::InfeasibleBall { .. }) => radius *= 0.5,
                Err(HinfError::RedrawLimit { .. }) => {
                    trace.records.push(row(n, j, f64::NAN, radius, eps, 0.0, calls(), &clock, &k));
                    trace.status = Status::Converged;
                    trace.note("stop_reason", "radius below kink resolution");
                    return Ok((Policy::new(k), trace));
                }
                Err(e) => return Err(e),
            }
        }
        let Some((_, mut gradients)) = sampled else {
            trace.records.push(row(n, j, f64::NAN, radius, eps, 0.0, calls(), &clock, &k));
            trace.status = Status::InfeasibleAbort;
            return Ok((Policy::new(k), trace));
        };
        let had_center = center_grad.is_some();
        if let Some(g) = center_grad.take() {
            gradients.insert(0, g);
        }
        let (f, _) = min_norm_point(&gradients)?;
        let f_norm = f.norm();

        if f_norm <= eps {
            trace.records.push(row(n, j, f_norm, delta, eps, 0.0, calls(), &clock, &k));
            delta *= cfg.mu_delta;
            eps *= cfg.mu_eps;
            center_grad = had_center.then(|| gradients.swap_remove(0));
            continue;
        }

        // Trust-region step: F_hat has norm `radius`, so K - t F_hat stays in the ball.
        let f_hat = &f * (radius / f_norm);
        let decrease = cfg.beta * radius * f_norm;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..LINE_SEARCH_CAP {
            let trial = &k - &f_hat * t;
            if let Some(jt) = try_cost(&cost, &trial)? {
                if jt < j - decrease * t {
                    accepted = Some((trial, jt));
                    break;
                }
            }
            t *= cfg.theta;
        }
        let Some((trial, jt)) = accepted else {
            trace.records.push(row(n, j, f_norm, radius, eps, 0.0, calls(), &clock, &k));
            center_grad = had_center.then(|| gradients.swap_remove(0));
            continue;
        };
        trace.records.push(row(n, j, f_norm, radius, eps, t, calls(), &clock, &k));

        match grad.gradient(&trial) {
            Ok(g) => {
                k = trial;
                j = jt;
                center_grad = Some(g);
            }
            Err(HinfError::NonDifferentiable(_)) => {
                let (kn, jn, gn) = relocate(&cost, &grad, &trial, jt, j - decrease * t, t.min(radius) * radius, &mut rng)?;
                k = kn;
                j = jn;
                center_grad = gn;
            }
            Err(e) => return Err(e),
        }
    }

    push_final(&mut trace, &k, j, eps, calls(), clock.elapsed());
    Ok((Policy::new(k), trace))
}

/// Rejection sampling for a differentiable replacement of `landing` within
/// `radius` that keeps the sufficient-decrease bound `< bound`.
fn relocate<C, G>(
    cost: &C,
    grad: &G,
    landing: &DMatrix<f64>,
    landing_cost: f64,
    bound: f64,
    radius: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(DMatrix<f64>, f64, Option<DMatrix<f64>>)>
where
    C: CostOracle + ?Sized,
    G: GradientOracle + ?Sized,
{
    for _ in 0..MAX_LANDING_DRAWS {
        let candidate = sample_ball(landing, radius, rng);
        let Some(jc) = try_cost(cost, &candidate)? else { continue };
        if jc >= bound {
            continue;
        }
        match grad.gradient(&candidate) {
            Ok(g) => return Ok((candidate, jc, Some(g))),
            Err(HinfError::NonDifferentiable(_)) | Err(HinfError::Unstable { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok((landing.clone(), landing_cost, None))
}
