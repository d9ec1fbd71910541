//! H-infinity estimation from simulated rollouts, and non-derivative
//! sampling driven by that estimate.
//!
//! The finite-horizon operator `T_N` maps a disturbance sequence
//! `w_0..w_{N-1}` to the outputs `z_0..z_{N-1}` of the closed loop. Its
//! largest singular value is found by power iteration on `T_N^T T_N`, with
//! `T_N^T` applied by running the transposed system backwards in time.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HinfError, Result};
use crate::hinf::oracle::CostOracle;
use crate::lti::{assemble_closed_loop, require_stable, ClosedLoop, Plant, Policy};
use crate::solvers::{solve_ns, IterationTrace, NsConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Window length `N`.
    pub horizon: usize,
    pub power_iters: usize,
    pub init_seed: u64,
    /// Early stop once successive estimates agree to this relative tolerance.
    pub rel_tol: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            horizon: 100,
            power_iters: 50,
            init_seed: 0,
            rel_tol: 1e-6,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(HinfError::Argument("horizon must be at least 2".into()));
        }
        if self.power_iters == 0 {
            return Err(HinfError::Argument("power_iters must be at least 1".into()));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(HinfError::Argument("rel_tol must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A signal over the window, one column per time step.
pub type Signal = DMatrix<f64>;

/// `T_N w`: outputs of the closed loop driven by `w` from `x_0 = 0`.
pub fn forward(cl: &ClosedLoop, w: &Signal) -> Result<Signal> {
    let mut z = DMatrix::zeros(cl.c().nrows(), w.ncols());
    forward_into(cl, w, &mut z, &mut DVector::zeros(cl.n()), &mut DVector::zeros(cl.n()))?;
    Ok(z)
}

fn forward_into(
    cl: &ClosedLoop,
    w: &Signal,
    z: &mut Signal,
    x: &mut DVector<f64>,
    next: &mut DVector<f64>,
) -> Result<()> {
    if w.nrows() != cl.n() {
        return Err(HinfError::Dimension(format!(
            "disturbance samples must have length {}, got {}",
            cl.n(),
            w.nrows()
        )));
    }
    x.fill(0.0);
    for t in 0..w.ncols() {
        z.column_mut(t).gemv(1.0, cl.c(), x, 0.0);
        next.copy_from(&w.column(t));
        next.gemv(1.0, cl.a(), x, 1.0);
        std::mem::swap(x, next);
    }
    Ok(())
}

/// `T_N^T v`, computed by running `(A^T, C^T)` on the time-reversed signal.
pub fn adjoint(cl: &ClosedLoop, v: &Signal) -> Result<Signal> {
    let mut out = DMatrix::zeros(cl.n(), v.ncols());
    adjoint_into(cl, v, &mut out, &mut DVector::zeros(cl.n()), &mut DVector::zeros(cl.n()))?;
    Ok(out)
}

fn adjoint_into(
    cl: &ClosedLoop,
    v: &Signal,
    out: &mut Signal,
    x: &mut DVector<f64>,
    next: &mut DVector<f64>,
) -> Result<()> {
    if v.nrows() != cl.c().nrows() {
        return Err(HinfError::Dimension(format!(
            "output samples must have length {}, got {}",
            cl.c().nrows(),
            v.nrows()
        )));
    }
    x.fill(0.0);
    for t in (0..v.ncols()).rev() {
        out.column_mut(t).copy_from(x);
        next.gemv_tr(1.0, cl.c(), &v.column(t), 0.0);
        next.gemv_tr(1.0, cl.a(), x, 1.0);
        std::mem::swap(x, next);
    }
    Ok(())
}

/// Lower estimate of the H-infinity norm of a stable closed loop from the
/// top singular value of its `N`-step convolution operator.
pub fn power_iteration_norm(cl: &ClosedLoop, cfg: &EstimatorConfig) -> Result<f64> {
    cfg.validate()?;
    let rho = cl.spectral_radius();
    if rho >= 1.0 {
        return Err(HinfError::Unstable { rho });
    }
    let (n, horizon) = (cl.n(), cfg.horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let mut w: Signal = DMatrix::from_fn(n, horizon, |_, _| StandardNormal.sample(&mut rng));
    w /= w.norm();
    let mut z = DMatrix::zeros(cl.c().nrows(), horizon);
    let (mut x, mut next) = (DVector::zeros(n), DVector::zeros(n));

    forward_into(cl, &w, &mut z, &mut x, &mut next)?;
    let mut estimate = z.norm();
    for _ in 0..cfg.power_iters {
        adjoint_into(cl, &z, &mut w, &mut x, &mut next)?;
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        w /= norm;
        forward_into(cl, &w, &mut z, &mut x, &mut next)?;
        let updated = z.norm();
        let settled = (updated - estimate).abs() <= cfg.rel_tol * updated;
        estimate = updated;
        if settled {
            break;
        }
    }
    Ok(estimate)
}

/// Cost oracle that replaces `J(K)` by [`power_iteration_norm`].
#[derive(Debug, Clone)]
pub struct NoisyCost {
    plant: Plant,
    cfg: EstimatorConfig,
}

impl NoisyCost {
    pub fn new(plant: Plant, cfg: EstimatorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { plant, cfg })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }
}

impl CostOracle for NoisyCost {
    fn cost(&self, k: &DMatrix<f64>) -> Result<f64> {
        require_stable(&self.plant, k)?;
        let cl = assemble_closed_loop(&self.plant, &Policy::new(k.clone()))?;
        power_iteration_norm(&cl, &self.cfg)
    }
}

pub fn noisy_cost_oracle(plant: &Plant, policy: &Policy, cfg: &EstimatorConfig) -> Result<f64> {
    NoisyCost::new(plant.clone(), *cfg)?.cost(policy.gain())
}

/// [`solve_ns`] with every cost evaluation replaced by a rollout estimate.
pub fn solve_ns_modelfree(
    plant: &Plant,
    k0: &Policy,
    ns_cfg: &NsConfig,
    est_cfg: &EstimatorConfig,
) -> Result<(Policy, IterationTrace)> {
    let oracle = NoisyCost::new(plant.clone(), *est_cfg)?;
    let (k, mut trace) = solve_ns(plant, k0, ns_cfg, &oracle)?;
    trace.note("horizon", est_cfg.horizon);
    Ok((k, trace))
}
