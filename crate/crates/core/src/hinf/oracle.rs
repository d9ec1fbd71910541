//! Cost and gradient oracles consumed by the bundle builders and solvers.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;

use crate::error::Result;
use crate::hinf::gradient::{grad_analytic_with, grad_fd, GradientConfig};
use crate::hinf::norm::{hinf_norm_grid_with, GridConfig};
use crate::lti::{assemble_closed_loop, require_stable, Plant, Policy};

/// Zeroth-order oracle `K -> J(K)`. Must be reentrant.
pub trait CostOracle: Sync {
    fn cost(&self, k: &DMatrix<f64>) -> Result<f64>;
}

/// First-order oracle `K -> grad J(K)` at differentiable points.
pub trait GradientOracle: Sync {
    fn gradient(&self, k: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

impl<F> CostOracle for F
where
    F: Fn(&DMatrix<f64>) -> Result<f64> + Sync,
{
    fn cost(&self, k: &DMatrix<f64>) -> Result<f64> {
        self(k)
    }
}

/// Exact H-infinity cost by frequency sweep.
#[derive(Debug, Clone)]
pub struct ExactCost {
    plant: Plant,
    grid: GridConfig,
}

impl ExactCost {
    pub fn new(plant: Plant) -> Self {
        Self::with_grid(plant, GridConfig::default())
    }

    pub fn with_grid(plant: Plant, grid: GridConfig) -> Self {
        Self { plant, grid }
    }

    /// Oracle on the [`GridConfig::search`] sweep.
    pub fn search(plant: Plant) -> Self {
        Self::with_grid(plant, GridConfig::search())
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }
}

impl CostOracle for ExactCost {
    fn cost(&self, k: &DMatrix<f64>) -> Result<f64> {
        require_stable(&self.plant, k)?;
        let cl = assemble_closed_loop(&self.plant, &Policy::new(k.clone()))?;
        Ok(hinf_norm_grid_with(&cl, &self.grid)?.value)
    }
}

/// Closed-form gradient at differentiable points.
#[derive(Debug, Clone)]
pub struct AnalyticGradient {
    plant: Plant,
    cfg: GradientConfig,
}

impl AnalyticGradient {
    pub fn new(plant: Plant) -> Self {
        Self::with_config(plant, GradientConfig::default())
    }

    pub fn with_config(plant: Plant, cfg: GradientConfig) -> Self {
        Self { plant, cfg }
    }

    /// Oracle on the [`GridConfig::search`] sweep.
    pub fn search(plant: Plant) -> Self {
        Self::with_config(
            plant,
            GradientConfig {
                grid: GridConfig::search(),
                ..GradientConfig::default()
            },
        )
    }
}

impl GradientOracle for AnalyticGradient {
    fn gradient(&self, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        grad_analytic_with(&self.plant, k, &self.cfg)
    }
}

/// Central finite differences of a cost oracle.
#[derive(Debug, Clone)]
pub struct FiniteDifferenceGradient<C> {
    cost: C,
    h: f64,
}

impl<C: CostOracle> FiniteDifferenceGradient<C> {
    pub fn new(cost: C, h: f64) -> Self {
        Self { cost, h }
    }
}

impl<C: CostOracle> GradientOracle for FiniteDifferenceGradient<C> {
    fn gradient(&self, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        grad_fd(&self.cost, k, self.h)
    }
}

/// Wraps an oracle and counts calls. Counting is shared across threads.
#[derive(Debug)]
pub struct Counted<'a, O: ?Sized> {
    inner: &'a O,
    calls: AtomicUsize,
}

impl<'a, O: ?Sized> Counted<'a, O> {
    pub fn new(inner: &'a O) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<O: CostOracle + ?Sized> CostOracle for Counted<'_, O> {
    fn cost(&self, k: &DMatrix<f64>) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.cost(k)
    }
}

impl<O: GradientOracle + ?Sized> GradientOracle for Counted<'_, O> {
    fn gradient(&self, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.gradient(k)
    }
}
