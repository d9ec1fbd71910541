//! Policy-search solvers and the iteration trace they share.

pub mod goldstein;
pub mod gs;
pub mod ingd;
pub mod ns;
mod trace;

use std::time::Instant;

use nalgebra::DMatrix;

pub use goldstein::{solve_goldstein, GoldsteinConfig, GoldsteinMode};
pub use gs::{solve_gs, GsConfig};
pub use ingd::{estimate_lipschitz, ingd_min_norm, solve_ingd, IngdConfig, IngdMode, MinNormOutcome};
pub use ns::{solve_ns, NsConfig};
pub use trace::{IterationTrace, Status, TraceRecord, REL_ERR_COLUMN, TRACE_HEADER};

use crate::error::{HinfError, Result};
use crate::hinf::oracle::CostOracle;
use crate::lti::{require_stable, Plant, Policy};

/// Consecutive radius halvings tolerated before a run is abandoned.
pub(crate) const MAX_LOCAL_SHRINKS: usize = 20;

pub(crate) fn check_start(plant: &Plant, k0: &Policy) -> Result<()> {
    plant.check_gain(k0.gain())?;
    match require_stable(plant, k0.gain()) {
        Ok(_) => Ok(()),
        Err(HinfError::Unstable { rho }) => Err(HinfError::Argument(format!(
            "initial policy not stabilizing: rho={rho}"
        ))),
        Err(e) => Err(e),
    }
}

/// Cost with instability mapped to `None`.
pub(crate) fn try_cost<C: CostOracle + ?Sized>(cost: &C, k: &DMatrix<f64>) -> Result<Option<f64>> {
    match cost.cost(k) {
        Ok(v) => Ok(Some(v)),
        Err(HinfError::Unstable { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

pub(crate) struct Clock {
    start: Instant,
    enabled: bool,
    limit_s: Option<f64>,
}

impl Clock {
    pub(crate) fn new(enabled: bool, limit_s: Option<f64>) -> Self {
        Self {
            start: Instant::now(),
            enabled,
            limit_s,
        }
    }

    /// Whether the wall-clock budget is spent. Independent of `enabled`.
    pub(crate) fn exhausted(&self) -> bool {
        self.limit_s.is_some_and(|l| self.start.elapsed().as_secs_f64() >= l)
    }

    pub(crate) fn elapsed(&self) -> f64 {
        if self.enabled {
            self.start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }
}

/// Appends a row for the final iterate unless the last row already holds it.
pub(crate) fn push_final(trace: &mut IterationTrace, k: &DMatrix<f64>, j: f64, eps: f64, calls: usize, elapsed_s: f64) {
    if trace.records.last().is_some_and(|r| r.gain.as_ref() == Some(k)) {
        return;
    }
    trace.records.push(TraceRecord {
        n: trace.records.len(),
        cost: j,
        f_norm: f64::NAN,
        delta: f64::NAN,
        eps,
        step: 0.0,
        oracle_calls: calls,
        elapsed_s,
        gain: Some(k.clone()),
    });
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn row(
    n: usize,
    j: f64,
    f_norm: f64,
    delta: f64,
    eps: f64,
    t: f64,
    calls: usize,
    clock: &Clock,
    k: &DMatrix<f64>,
) -> TraceRecord {
    TraceRecord {
        n,
        cost: j,
        f_norm,
        delta,
        eps,
        step: t,
        oracle_calls: calls,
        elapsed_s: clock.elapsed(),
        gain: Some(k.clone()),
    }
}

pub(crate) fn reached(target: Option<f64>, j: f64) -> bool {
    target.is_some_and(|t| j <= t)
}
