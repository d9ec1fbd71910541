//! Frequency-sweep evaluation of the closed-loop H-infinity norm
//!
//! `g(w) = sigma_max(C_cl (e^{jw} I - A_cl)^{-1})` is sampled on a uniform
//! grid over `[0, pi]` (it is symmetric about `pi`) and every local maximum
//! of the grid is polished by golden-section search.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{HinfError, Result};
use crate::lti::ClosedLoop;

pub const DEFAULT_COARSE_POINTS: usize = 1024;
pub const SEARCH_COARSE_POINTS: usize = 256;
pub const DEFAULT_REFINE_TOL: f64 = 1e-10;
/// Grid floor accepted by [`hinf_norm_grid`].
pub const MIN_COARSE_POINTS: usize = 64;
/// Local maxima refined per evaluation, largest grid values first.
const MAX_REFINED_PEAKS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    GridRefine,
    Bisection,
}

/// An H-infinity norm value with the frequency where it peaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormResult {
    pub value: f64,
    pub peak_frequency: f64,
    pub method: NormMethod,
    pub tolerance: f64,
    pub grid_size: Option<usize>,
}

/// Grid and refinement settings for the frequency sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub coarse_points: usize,
    pub refine_tol: f64,
}

impl GridConfig {
    /// Coarser sweep used inside the solvers, where the cost is evaluated
    /// thousands of times.
    pub fn search() -> Self {
        Self {
            coarse_points: SEARCH_COARSE_POINTS,
            ..Self::default()
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            coarse_points: DEFAULT_COARSE_POINTS,
            refine_tol: DEFAULT_REFINE_TOL,
        }
    }
}

/// Precomputed complex data for evaluating `g(w)` at many frequencies.
pub struct FrequencyResponse {
    a: DMatrix<Complex64>,
    c: DMatrix<Complex64>,
    n: usize,
}

impl FrequencyResponse {
    pub fn new(cl: &ClosedLoop) -> Self {
        Self {
            a: cl.a().map(|v| Complex64::new(v, 0.0)),
            c: cl.c().map(|v| Complex64::new(v, 0.0)),
            n: cl.n(),
        }
    }

    /// `(e^{jw} I - A_cl)^{-1}`, or `None` when `e^{jw}` is an eigenvalue.
    pub fn resolvent(&self, omega: f64) -> Option<DMatrix<Complex64>> {
        let z = Complex64::from_polar(1.0, omega);
        let mut m = -&self.a;
        for i in 0..self.n {
            m[(i, i)] += z;
        }
        m.try_inverse()
    }

    /// `H(w) = C_cl (e^{jw} I - A_cl)^{-1}`.
    pub fn transfer(&self, omega: f64) -> Option<DMatrix<Complex64>> {
        self.resolvent(omega).map(|r| &self.c * r)
    }

    /// Largest singular value of `H(w)`; `+inf` on the unit-circle spectrum.
    pub fn gain(&self, omega: f64) -> f64 {
        match self.transfer(omega) {
            Some(h) => max_singular_value(&h),
            None => f64::INFINITY,
        }
    }
}

pub(crate) fn max_singular_value(h: &DMatrix<Complex64>) -> f64 {
    let gram = h.adjoint() * h;
    let n = gram.nrows();
    // Column-major copy; the Jacobi sweep only needs the Hermitian entries.
    let mut buf: Vec<Complex64> = gram.as_slice().to_vec();
    hermitian_lambda_max(&mut buf, n).max(0.0).sqrt()
}

/// Largest eigenvalue of a Hermitian matrix stored column-major in `g`,
/// by cyclic complex Jacobi rotations. `g` is overwritten.
pub(crate) fn hermitian_lambda_max(g: &mut [Complex64], n: usize) -> f64 {
    let idx = |r: usize, c: usize| r + c * n;
    for _sweep in 0..50 {
        let mut off = 0.0;
        let mut diag = 0.0;
        for c in 0..n {
            diag += g[idx(c, c)].re * g[idx(c, c)].re;
            for r in 0..c {
                off += g[idx(r, c)].norm_sqr();
            }
        }
        if off <= 1e-32 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let b = g[idx(p, q)];
                let b_abs = b.norm_sqr().sqrt();
                if b_abs == 0.0 {
                    continue;
                }
                let phase = b / b_abs;
                let app = g[idx(p, p)].re;
                let aqq = g[idx(q, q)].re;
                let theta = (aqq - app) / (2.0 * b_abs);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                // U = diag(1, conj(phase)) * [[c, s], [-s, c]] on (p, q).
                let u_pp = Complex64::new(cs, 0.0);
                let u_pq = Complex64::new(sn, 0.0);
                let u_qp = -phase.conj() * sn;
                let u_qq = phase.conj() * cs;
                for k in 0..n {
                    let gp = g[idx(k, p)];
                    let gq = g[idx(k, q)];
                    g[idx(k, p)] = gp * u_pp + gq * u_qp;
                    g[idx(k, q)] = gp * u_pq + gq * u_qq;
                }
                for k in 0..n {
                    let gp = g[idx(p, k)];
                    let gq = g[idx(q, k)];
                    g[idx(p, k)] = u_pp.conj() * gp + u_qp.conj() * gq;
                    g[idx(q, k)] = u_pq.conj() * gp + u_qq.conj() * gq;
                }
                g[idx(p, q)] = Complex64::new(0.0, 0.0);
                g[idx(q, p)] = Complex64::new(0.0, 0.0);
            }
        }
    }
    (0..n).map(|i| g[idx(i, i)].re).fold(f64::NEG_INFINITY, f64::max)
}

/// Maximizes `f` on `[lo, hi]` by golden-section search until the bracket
/// is narrower than `tol`. Returns `(argmax, max)`.
pub(crate) fn golden_section_max<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
        // Bracket can stop shrinking once it reaches float resolution.
        if x1 >= x2 {
            break;
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Frequency-sweep H-infinity norm of a stable closed loop.
pub fn hinf_norm_grid(cl: &ClosedLoop, coarse_points: usize, refine_tol: f64) -> Result<NormResult> {
    if coarse_points < MIN_COARSE_POINTS {
        return Err(HinfError::Argument(format!(
            "coarse_points must be at least {MIN_COARSE_POINTS}, got {coarse_points}"
        )));
    }
    if !(refine_tol > 0.0) {
        return Err(HinfError::Argument("refine_tol must be positive".into()));
    }
    let rho = cl.spectral_radius();
    if rho >= 1.0 {
        return Err(HinfError::Unstable { rho });
    }
    let resp = FrequencyResponse::new(cl);
    let (omega, value) = sweep_and_refine(&resp, coarse_points, refine_tol);
    Ok(NormResult {
        value,
        peak_frequency: omega,
        method: NormMethod::GridRefine,
        tolerance: refine_tol,
        grid_size: Some(coarse_points),
    })
}

pub fn hinf_norm_grid_with(cl: &ClosedLoop, cfg: &GridConfig) -> Result<NormResult> {
    hinf_norm_grid(cl, cfg.coarse_points, cfg.refine_tol)
}

/// Sorted (descending) refined peaks `(omega, value)` of `g` on `[0, pi]`.
pub(crate) fn refined_peaks(
    resp: &FrequencyResponse,
    coarse_points: usize,
    refine_tol: f64,
) -> Vec<(f64, f64)> {
    let step = PI / (coarse_points - 1) as f64;
    let grid: Vec<f64> = (0..coarse_points).map(|i| resp.gain(i as f64 * step)).collect();

    let last = coarse_points - 1;
    let mut candidates: Vec<usize> = (0..coarse_points)
        .filter(|&i| {
            let left = if i == 0 { grid[1] } else { grid[i - 1] };
            let right = if i == last { grid[last - 1] } else { grid[i + 1] };
            // Ends are interior points of the circle because g is even.
            (grid[i] > left && grid[i] >= right) || (i == 0 && grid[0] >= grid[1])
                || (i == last && grid[last] >= grid[last - 1])
        })
        .collect();
    if candidates.is_empty() {
        let best = (0..coarse_points)
            .max_by(|&i, &j| grid[i].total_cmp(&grid[j]))
            .unwrap_or(0);
        candidates.push(best);
    }
    candidates.sort_by(|&i, &j| grid[j].total_cmp(&grid[i]));
    candidates.truncate(MAX_REFINED_PEAKS);

    let mut peaks: Vec<(f64, f64)> = candidates
        .into_iter()
        .map(|i| {
            let lo = (i as f64 - 1.0).max(0.0) * step;
            let hi = ((i + 1).min(last)) as f64 * step;
            let (w, v) = golden_section_max(|w| resp.gain(w), lo, hi, refine_tol);
            if grid[i] >= v {
                (i as f64 * step, grid[i])
            } else {
                (w, v)
            }
        })
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    peaks
}

fn sweep_and_refine(resp: &FrequencyResponse, coarse_points: usize, refine_tol: f64) -> (f64, f64) {
    refined_peaks(resp, coarse_points, refine_tol)[0]
}
