//! Interpolated normalized gradient descent.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_start, push_final, reached, row, try_cost, Clock, IterationTrace, Status};
use crate::bundle::sample_ball;
use crate::error::{HinfError, Result};
use crate::hinf::oracle::{CostOracle, Counted, GradientOracle};
use crate::lti::{Plant, Policy};

/// Draws allowed for one gradient probe before the ball counts as infeasible.
pub const MAX_PROBE_DRAWS: usize = 100;
/// Samples used to estimate the Lipschitz constant.
pub const LIPSCHITZ_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngdMode {
    /// Stop at the first `(delta, eps)`-stationary point.
    Constant,
    /// Multiply `delta` by `anneal_factor` at each stationary point and go on.
    Anneal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngdConfig {
    pub mode: IngdMode,
    pub delta: f64,
    pub eps: f64,
    /// Lipschitz constant; `None` estimates it around the start.
    pub lipschitz: Option<f64>,
    pub max_iters: usize,
    pub max_inner: usize,
    pub anneal_factor: f64,
    /// Anneal mode stops once `delta` falls below this.
    pub delta_min: f64,
    pub seed: u64,
    pub target_cost: Option<f64>,
    pub record_time: bool,
    /// Wall-clock budget; the run stops with `iteration_cap` once spent.
    pub time_limit_s: Option<f64>,
}

impl Default for IngdConfig {
    fn default() -> Self {
        Self {
            mode: IngdMode::Constant,
            delta: 0.01,
            eps: 1e-5,
            lipschitz: None,
            max_iters: 2000,
            max_inner: 1000,
            anneal_factor: 0.7,
            delta_min: 1e-10,
            seed: 0,
            target_cost: None,
            record_time: true,
            time_limit_s: None,
        }
    }
}

impl IngdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !(self.eps > 0.0) {
            return Err(HinfError::Argument("delta and eps must be positive".into()));
        }
        if let Some(l) = self.lipschitz {
            if !(l > 0.0) || !l.is_finite() {
                return Err(HinfError::Argument(format!("Lipschitz constant must be positive, got {l}")));
            }
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor < 1.0) {
            return Err(HinfError::Argument("anneal_factor must lie in (0, 1)".into()));
        }
        if self.max_inner == 0 {
            return Err(HinfError::Argument("max_inner must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinNormOutcome {
    pub direction: DMatrix<f64>,
    pub inner_iters: usize,
    /// True when the inner loop stopped at `max_inner` rather than by its guard.
    pub capped: bool,
}

/// Closest point to the origin on the segment `[a, b]`; ties go to `b`.
pub fn segment_min_norm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a - b;
    let dd = d.norm_squared();
    if dd == 0.0 {
        return b.clone();
    }
    // Weight on b: lambda minimizing |a - lambda d|.
    let lambda = (a.dot(&d) / dd).clamp(0.0, 1.0);
    a - d * lambda
}

fn probe_gradient<G, F>(grad: &G, mut draw: F) -> Result<DMatrix<f64>>
where
    G: GradientOracle + ?Sized,
    F: FnMut() -> DMatrix<f64>,
{
    let mut unstable = false;
    for _ in 0..MAX_PROBE_DRAWS {
        match grad.gradient(&draw()) {
            Ok(g) => return Ok(g),
            Err(HinfError::NonDifferentiable(_)) => continue,
            Err(HinfError::Unstable { .. }) => unstable = true,
            Err(e) => return Err(e),
        }
    }
    if unstable {
        Err(HinfError::InfeasibleBall { radius: f64::NAN })
    } else {
        Err(HinfError::RedrawLimit { redraws: MAX_PROBE_DRAWS })
    }
}

/// Descent direction at `k` whose norm is either at most `eps` or certifies
/// `J(k) - J(k - delta F/|F|) > delta |F| / 4`.
#[allow(clippy::too_many_arguments)]
pub fn ingd_min_norm<C, G, R>(
    cost: &C,
    grad: &G,
    k: &DMatrix<f64>,
    delta: f64,
    eps: f64,
    lipschitz: f64,
    max_inner: usize,
    rng: &mut R,
) -> Result<MinNormOutcome>
where
    C: CostOracle + ?Sized,
    G: GradientOracle + ?Sized,
    R: Rng + ?Sized,
{
    if !(delta > 0.0) || !(eps > 0.0) || !(lipschitz > 0.0) {
        return Err(HinfError::Argument("delta, eps and L must be positive".into()));
    }
    let j = cost.cost(k)?;
    let mut f = probe_gradient(grad, || sample_ball(k, delta, rng)).map_err(|e| with_radius(e, delta))?;
    let mut inner = 0;
    loop {
        let nf = f.norm();
        if nf <= eps {
            break;
        }
        let jstep = try_cost(cost, &(k - &f * (delta / nf)))?.unwrap_or(f64::INFINITY);
        if j - jstep > 0.25 * delta * nf {
            break;
        }
        if inner >= max_inner {
            return Ok(MinNormOutcome {
                direction: f,
                inner_iters: inner,
                capped: true,
            });
        }
        let x = nf * nf / (128.0 * lipschitz * lipschitz);
        let r = 0.5 * nf * (1.0 - (1.0 - x).powi(2)).max(0.0).sqrt();
        let g = probe_gradient(grad, || {
            let upsilon = sample_ball(&f, r, rng);
            let s: f64 = rng.random();
            let scale = s * delta / upsilon.norm();
            k - upsilon * scale
        })
        .map_err(|e| with_radius(e, delta))?;
        f = segment_min_norm(&f, &g);
        inner += 1;
    }
    Ok(MinNormOutcome {
        direction: f,
        inner_iters: inner,
        capped: false,
    })
}

fn with_radius(e: HinfError, delta: f64) -> HinfError {
    match e {
        HinfError::InfeasibleBall { .. } => HinfError::InfeasibleBall { radius: delta },
        other => other,
    }
}

/// `1.5 * max |grad J|` over uniform samples from `B_delta(k)`.
pub fn estimate_lipschitz<G, R>(grad: &G, k: &DMatrix<f64>, delta: f64, rng: &mut R) -> Result<f64>
where
    G: GradientOracle + ?Sized,
    R: Rng + ?Sized,
{
    let mut best = 0.0f64;
    for _ in 0..LIPSCHITZ_SAMPLES {
        let g = probe_gradient(grad, || sample_ball(k, delta, rng)).map_err(|e| with_radius(e, delta))?;
        best = best.max(g.norm());
    }
    Ok(1.5 * best.max(f64::MIN_POSITIVE))
}

pub fn solve_ingd<C, G>(
    plant: &Plant,
    k0: &Policy,
    cfg: &IngdConfig,
    cost: &C,
    grad: &G,
) -> Result<(Policy, IterationTrace)>
where
    C: CostOracle + ?Sized,
    G: GradientOracle + ?Sized,
{
    check_start(plant, k0)?;
    cfg.validate()?;
    let cost = Counted::new(cost);
    let grad = Counted::new(grad);
    let calls = || cost.calls() + grad.calls();
    let clock = Clock::new(cfg.record_time, cfg.time_limit_s);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = IterationTrace::new();
    trace.note("algorithm", "ingd");

    let mut k = k0.gain().clone();
    let mut delta = cfg.delta;
    let lipschitz = match cfg.lipschitz {
        Some(l) => {
            trace.note("lipschitz", l);
            l
        }
        None => {
            let l = estimate_lipschitz(&grad, &k, delta, &mut rng)?;
            trace.note("lipschitz_estimated", l);
            l
        }
    };
    let mut j = cost.cost(&k)?;
    let mut capped_calls = 0;

    for n in 0..cfg.max_iters {
        if clock.exhausted() {
            trace.note("stop_reason", "time limit");
            break;
        }
        if reached(cfg.target_cost, j) {
            trace.status = Status::Converged;
            break;
        }
        if cfg.mode == IngdMode::Anneal && delta < cfg.delta_min {
            trace.status = Status::Converged;
            break;
        }
        let outcome = match ingd_min_norm(&cost, &grad, &k, delta, cfg.eps, lipschitz, cfg.max_inner, &mut rng) {
            Ok(o) => o,
            Err(HinfError::InfeasibleBall { .. }) => {
                trace.records.push(row(n, j, f64::NAN, delta, cfg.eps, 0.0, calls(), &clock, &k));
                trace.status = Status::InfeasibleAbort;
                return Ok((Policy::new(k), trace));
            }
            Err(HinfError::RedrawLimit { .. }) => {
                trace.records.push(row(n, j, f64::NAN, delta, cfg.eps, 0.0, calls(), &clock, &k));
                trace.status = Status::Converged;
                trace.note("stop_reason", "radius below kink resolution");
                return Ok((Policy::new(k), trace));
            }
            Err(e) => return Err(e),
        };
        capped_calls += usize::from(outcome.capped);
        let f = outcome.direction;
        let nf = f.norm();
        if nf <= cfg.eps {
            trace.records.push(row(n, j, nf, delta, cfg.eps, 0.0, calls(), &clock, &k));
            match cfg.mode {
                IngdMode::Constant => {
                    trace.status = Status::StationaryTarget;
                    trace.note("capped_min_norm_calls", capped_calls);
                    return Ok((Policy::new(k), trace));
                }
                IngdMode::Anneal => {
                    delta *= cfg.anneal_factor;
                    continue;
                }
            }
        }
        let next = &k - &f * (delta / nf);
        match try_cost(&cost, &next)? {
            Some(jn) if !outcome.capped || jn <= j => {
                trace.records.push(row(n, j, nf, delta, cfg.eps, delta, calls(), &clock, &k));
                k = next;
                j = jn;
            }
            // A capped inner loop carries no descent guarantee; skip steps
            // that would raise the cost or leave the stabilizing set.
            _ => trace.records.push(row(n, j, nf, delta, cfg.eps, 0.0, calls(), &clock, &k)),
        }
    }

    trace.note("capped_min_norm_calls", capped_calls);
    push_final(&mut trace, &k, j, cfg.eps, calls(), clock.elapsed());
    Ok((Policy::new(k), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use crate::hinf::oracle::{AnalyticGradient, ExactCost};
    use crate::solvers::testing::all_stabilizing;
    use nalgebra::dmatrix;

    #[test]
    fn segment_projection_cases() {
        let a = dmatrix![1.0, 2.0];
        assert!(segment_min_norm(&a, &(-&a)).norm() <= 1e-15);
        assert_eq!(segment_min_norm(&a, &a), a);
        let b = dmatrix![1.0, -2.0];
        let p = segment_min_norm(&a, &b);
        assert!((p - dmatrix![1.0, 0.0]).norm() <= 1e-15);
        let far = dmatrix![3.0, 4.0];
        assert_eq!(segment_min_norm(&a, &far), a);
        assert_eq!(segment_min_norm(&far, &a), a);
    }

    struct Constant(DMatrix<f64>);
    impl GradientOracle for Constant {
        fn gradient(&self, _: &DMatrix<f64>) -> Result<DMatrix<f64>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn small_first_gradient_returns_immediately() {
        let cost = |_: &DMatrix<f64>| -> Result<f64> { Ok(1.0) };
        let grad = Constant(dmatrix![1e-9, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = ingd_min_norm(&cost, &grad, &dmatrix![0.0, 0.0], 0.1, 1e-6, 1.0, 10, &mut rng).unwrap();
        assert_eq!(out.inner_iters, 0);
        assert!(!out.capped);
    }

    #[test]
    fn exit_condition_holds_on_paper_instance() {
        let (plant, k0) = examples::example13();
        let cost = ExactCost::new(plant.clone());
        let grad = AnalyticGradient::new(plant);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let l = estimate_lipschitz(&grad, k0.gain(), 0.01, &mut rng).unwrap();
        let j = cost.cost(k0.gain()).unwrap();
        for _ in 0..5 {
            let out = ingd_min_norm(&cost, &grad, k0.gain(), 0.01, 1e-5, l, 1000, &mut rng).unwrap();
            let f = &out.direction;
            let nf = f.norm();
            let drop = j - cost.cost(&(k0.gain() - f * (0.01 / nf))).unwrap();
            assert!(out.capped || nf <= 1e-5 || drop > 0.0025 * nf);
        }
    }

    #[test]
    fn outer_steps_decrease_cost_by_the_guaranteed_amount() {
        let (plant, k0) = examples::example13();
        let cost = ExactCost::new(plant.clone());
        let grad = AnalyticGradient::new(plant.clone());
        let cfg = IngdConfig {
            max_iters: 20,
            seed: 4,
            ..Default::default()
        };
        let (_, trace) = solve_ingd(&plant, &k0, &cfg, &cost, &grad).unwrap();
        assert!(all_stabilizing(&plant, &trace));
        assert!(trace.metadata_value("lipschitz_estimated").is_some());
        for w in trace.records.windows(2) {
            if w[0].step > 0.0 {
                assert!(w[0].cost - w[1].cost > 0.25 * w[0].delta * w[0].f_norm);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(IngdConfig::default().validate().is_ok());
        assert!(IngdConfig { lipschitz: Some(0.0), ..Default::default() }.validate().is_err());
        assert!(IngdConfig { eps: 0.0, ..Default::default() }.validate().is_err());
        assert!(IngdConfig { anneal_factor: 1.0, ..Default::default() }.validate().is_err());
    }
}
