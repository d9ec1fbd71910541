//! Gradients of the H-infinity cost.
//!
//! At a differentiable `K` the peak of `sigma_max(H(K, w))` is attained at a
//! single frequency `w0` with a simple top singular value, and
//!
//! ```text
//! grad J(K) = Re( R K (Gamma + Gamma^T) - (H2 v1 u1^* H(K, w0) B)^T )
//! ```
//!
//! with `H1 = (Q + K^T R K)^{1/2}`, `H2 = (e^{j w0} I - A + BK)^{-1}` and
//! `Gamma` solving `H1 Gamma + Gamma H1 = H2 v1 u1^*`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{HinfError, Result};
use crate::hinf::norm::{refined_peaks, FrequencyResponse, GridConfig};
use crate::hinf::oracle::CostOracle;
use crate::lti::{require_stable, symmetrize, ClosedLoop, Plant};

/// Step used by the finite-difference oracle unless told otherwise.
pub const DEFAULT_FD_STEP: f64 = 1e-4;
/// Relative gap below which a second peak or a repeated top singular value
/// makes the point count as nondifferentiable.
pub const DEFAULT_GAP_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientConfig {
    pub grid: GridConfig,
    pub gap_tol: f64,
}

impl Default for GradientConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            gap_tol: DEFAULT_GAP_TOL,
        }
    }
}

/// Central differences `(J(K + h E_ij) - J(K - h E_ij)) / 2h`.
pub fn grad_fd<C: CostOracle + ?Sized>(cost: &C, k: &DMatrix<f64>, h: f64) -> Result<DMatrix<f64>> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(HinfError::Argument(format!("finite-difference step must be positive, got {h}")));
    }
    let mut grad = DMatrix::zeros(k.nrows(), k.ncols());
    let mut probe = k.clone();
    for j in 0..k.ncols() {
        for i in 0..k.nrows() {
            let base = k[(i, j)];
            probe[(i, j)] = base + h;
            let up = cost.cost(&probe)?;
            probe[(i, j)] = base - h;
            let down = cost.cost(&probe)?;
            probe[(i, j)] = base;
            grad[(i, j)] = (up - down) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// Gupal estimate `chi(K, alpha, z)` with `z` in `[-1/2, 1/2]^{n_u x n_x}`.
///
/// Entry `(i, j)` is `(J(K + alpha z + V+) - J(K + alpha z + V-)) / alpha`,
/// where the two probes agree with `K + alpha z` except in entry `(i, j)`,
/// which is set to `K_ij + alpha/2` and `K_ij - alpha/2` respectively.
pub fn gupal_chi<C: CostOracle + ?Sized>(
    cost: &C,
    k: &DMatrix<f64>,
    alpha: f64,
    z: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(HinfError::Argument(format!("mollifier alpha must be positive, got {alpha}")));
    }
    if z.shape() != k.shape() {
        return Err(HinfError::Dimension("z must have the shape of K".into()));
    }
    if z.iter().any(|v| !(-0.5..=0.5).contains(v)) {
        return Err(HinfError::Argument("z must lie in [-1/2, 1/2]".into()));
    }
    let shifted = k + z * alpha;
    let mut chi = DMatrix::zeros(k.nrows(), k.ncols());
    let mut probe = shifted.clone();
    for j in 0..k.ncols() {
        for i in 0..k.nrows() {
            probe[(i, j)] = k[(i, j)] + 0.5 * alpha;
            let up = cost.cost(&probe)?;
            probe[(i, j)] = k[(i, j)] - 0.5 * alpha;
            let down = cost.cost(&probe)?;
            probe[(i, j)] = shifted[(i, j)];
            chi[(i, j)] = (up - down) / alpha;
        }
    }
    Ok(chi)
}

/// Analytic gradient with default grid and gap thresholds.
pub fn grad_analytic(plant: &Plant, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    grad_analytic_with(plant, k, &GradientConfig::default())
}

pub fn grad_analytic_with(plant: &Plant, k: &DMatrix<f64>, cfg: &GradientConfig) -> Result<DMatrix<f64>> {
    require_stable(plant, k)?;
    let a_cl = plant.closed_loop_matrix(k)?;
    let weight = SymmetricEigen::new(symmetrize(&plant.stage_weight(k)?));
    let w = weight.eigenvectors;
    let roots = weight.eigenvalues.map(|l| l.max(0.0).sqrt());
    let h1 = &w * DMatrix::from_diagonal(&roots) * w.transpose();
    let cl = ClosedLoop::from_parts(a_cl, h1.clone())?;
    let resp = FrequencyResponse::new(&cl);

    let peaks = refined_peaks(&resp, cfg.grid.coarse_points, cfg.grid.refine_tol);
    let (omega0, top) = peaks[0];
    // A second local maximum at a different frequency close to the top one
    // means the sup is (nearly) attained twice.
    if let Some(&(w2, v2)) = peaks.iter().skip(1).find(|(w, _)| (w - omega0).abs() > 1e-6) {
        if v2 >= top * (1.0 - cfg.gap_tol) {
            return Err(HinfError::NonDifferentiable(format!(
                "peak attained near both w={omega0:.6} and w={w2:.6}"
            )));
        }
    }

    let h2 = resp
        .resolvent(omega0)
        .ok_or_else(|| HinfError::Oracle("resolvent singular at peak frequency".into()))?;
    let h1c = h1.map(|v| Complex64::new(v, 0.0));
    let h = &h1c * &h2;
    let svd = h.clone().svd(true, true);
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let i1 = order[0];
    if order.len() > 1 && sv[i1] - sv[order[1]] < cfg.gap_tol * sv[i1] {
        return Err(HinfError::NonDifferentiable(format!(
            "top singular value repeated at w={omega0:.6}"
        )));
    }
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^*");
    let u1 = u.column(i1).into_owned();
    let v1 = v_t.row(i1).adjoint();

    // Gamma solves H1 Gamma + Gamma H1 = X in the eigenbasis of H1.
    let x = (&h2 * &v1) * u1.adjoint();
    let wc = w.map(|v| Complex64::new(v, 0.0));
    let mut y = wc.transpose() * &x * &wc;
    let n = roots.len();
    for c in 0..n {
        for r in 0..n {
            y[(r, c)] /= roots[r] + roots[c];
        }
    }
    let gamma = &wc * y * wc.transpose();

    let kc = k.map(|v| Complex64::new(v, 0.0));
    let rc = plant.r().map(|v| Complex64::new(v, 0.0));
    let bc = plant.b().map(|v| Complex64::new(v, 0.0));
    let first = &rc * &kc * (&gamma + gamma.transpose());
    let second = ((&h2 * &v1) * u1.adjoint() * &h * &bc).transpose();
    Ok((first - second).map(|v| v.re))
}
