//! Riccati-based certification of `J(K) <= gamma`.
//!
//! For a stabilizing `K`, `J(K) < gamma` exactly when the recursion
//!
//! ```text
//! P <- A_cl^T (P + P (gamma^2 I - P)^{-1} P) A_cl + Q + K^T R K,   P_0 = 0
//! ```
//!
//! stays bounded with `gamma^2 I - P > 0` along the way; the limit is the
//! minimal positive definite solution of the game Riccati equation. The
//! recursion is monotone, so the doubling variant (which jumps straight to
//! the iterate `P_{2^k}`) decides feasibility with the same verdict in a
//! logarithmic number of steps.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{HinfError, Result};
use crate::hinf::norm::{hinf_norm_grid, NormMethod, NormResult};
use crate::lti::{assemble_closed_loop, require_stable, symmetrize, ClosedLoop, Plant, Policy};

/// Smallest eigenvalue margin demanded of `gamma^2 I - P`.
pub const EPS_PD: f64 = 1e-9;
/// `||P||_F` above which the recursion is declared divergent.
pub const DIVERGENCE_BOUND: f64 = 1e12;
pub const DEFAULT_ITERATION_CAP: usize = 20_000;
const CONVERGENCE_TOL: f64 = 1e-11;
/// Doubling steps allowed; `2^60` recursion steps is far past any useful cap.
const MAX_DOUBLINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiccatiScheme {
    /// Plain fixed-point recursion, one step at a time.
    FixedPoint,
    /// Doubling: each step squares the number of recursion steps covered.
    Doubling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiccatiConfig {
    pub scheme: RiccatiScheme,
    /// Iteration cap for [`RiccatiScheme::FixedPoint`].
    pub max_iters: usize,
}

impl Default for RiccatiConfig {
    fn default() -> Self {
        Self {
            scheme: RiccatiScheme::Doubling,
            max_iters: DEFAULT_ITERATION_CAP,
        }
    }
}

/// Outcome of a `J(K) <= gamma` test.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityCertificate {
    pub gamma: f64,
    pub feasible: bool,
    /// Minimal Riccati solution when feasible.
    pub p: Option<DMatrix<f64>>,
    /// Recursion steps performed (doubling steps for the doubling scheme).
    pub iterations: usize,
    /// Frobenius norm of the Riccati residual at the returned `P`, or
    /// `+inf` when infeasible.
    pub residual: f64,
}

impl FeasibilityCertificate {
    fn infeasible(gamma: f64, iterations: usize) -> Self {
        Self {
            gamma,
            feasible: false,
            p: None,
            iterations,
            residual: f64::INFINITY,
        }
    }
}

/// Frobenius norm of `A^T (P + P (g^2 I - P)^{-1} P) A + S - P`.
pub fn riccati_residual(a_cl: &DMatrix<f64>, s: &DMatrix<f64>, gamma: f64, p: &DMatrix<f64>) -> Option<f64> {
    let next = riccati_step(a_cl, s, gamma, p)?;
    Some((next - p).norm())
}

fn riccati_step(a_cl: &DMatrix<f64>, s: &DMatrix<f64>, gamma: f64, p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = p.nrows();
    let m = DMatrix::identity(n, n) * (gamma * gamma) - p;
    let chol = m.cholesky()?;
    let inner = p + p * chol.solve(p);
    Some(symmetrize(&(a_cl.transpose() * inner * a_cl + s)))
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

fn margin_ok(gamma: f64, p: &DMatrix<f64>) -> bool {
    let n = p.nrows();
    min_eigenvalue(&(DMatrix::identity(n, n) * (gamma * gamma) - p)) > EPS_PD
}

/// Decides `J(K) < gamma` (up to the tolerances above) by the Riccati
/// recursion from `P_0 = 0`, using the default doubling scheme.
pub fn hinf_feasible(plant: &Plant, policy: &Policy, gamma: f64) -> Result<FeasibilityCertificate> {
    hinf_feasible_with(plant, policy, gamma, &RiccatiConfig::default())
}

pub fn hinf_feasible_with(
    plant: &Plant,
    policy: &Policy,
    gamma: f64,
    cfg: &RiccatiConfig,
) -> Result<FeasibilityCertificate> {
    require_stable(plant, policy.gain())?;
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(HinfError::Argument(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    if gamma == 0.0 {
        return Ok(FeasibilityCertificate::infeasible(gamma, 0));
    }
    let a_cl = plant.closed_loop_matrix(policy.gain())?;
    let s = symmetrize(&plant.stage_weight(policy.gain())?);
    let (p, iterations) = match cfg.scheme {
        RiccatiScheme::FixedPoint => fixed_point(&a_cl, &s, gamma, cfg.max_iters),
        RiccatiScheme::Doubling => doubling(&a_cl, &s, gamma),
    };
    match p {
        Some(p) if margin_ok(gamma, &p) => {
            let residual = riccati_residual(&a_cl, &s, gamma, &p).unwrap_or(f64::INFINITY);
            Ok(FeasibilityCertificate {
                gamma,
                feasible: true,
                p: Some(p),
                iterations,
                residual,
            })
        }
        _ => Ok(FeasibilityCertificate::infeasible(gamma, iterations)),
    }
}

fn converged(prev: &DMatrix<f64>, next: &DMatrix<f64>) -> bool {
    (next - prev).norm() < CONVERGENCE_TOL * (1.0 + next.norm())
}

fn fixed_point(a_cl: &DMatrix<f64>, s: &DMatrix<f64>, gamma: f64, cap: usize) -> (Option<DMatrix<f64>>, usize) {
    let n = a_cl.nrows();
    let mut p = DMatrix::zeros(n, n);
    for it in 1..=cap {
        let Some(next) = riccati_step(a_cl, s, gamma, &p) else {
            return (None, it);
        };
        if next.norm() > DIVERGENCE_BOUND || !margin_ok(gamma, &next) {
            return (None, it);
        }
        if converged(&p, &next) {
            return (Some(next), it);
        }
        p = next;
    }
    (None, cap)
}

/// Doubling form of the recursion `X <- A^T X (I + G X)^{-1} A + H` with
/// `G = -gamma^{-2} I`, `H = S`. After `k` steps `h` equals `X_{2^k}`.
fn doubling(a_cl: &DMatrix<f64>, s: &DMatrix<f64>, gamma: f64) -> (Option<DMatrix<f64>>, usize) {
    let n = a_cl.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut a = a_cl.clone();
    let mut g = &eye * (-1.0 / (gamma * gamma));
    let mut h = s.clone();
    if !margin_ok(gamma, &h) {
        return (None, 0);
    }
    for k in 1..=MAX_DOUBLINGS {
        let Some(w) = (&eye + &g * &h).try_inverse() else {
            return (None, k);
        };
        // (I + G H)^{-1} A and its transpose partner.
        let w_a = &w * &a;
        let h_next = symmetrize(&(&h + a.transpose() * &h * &w_a));
        let g_next = symmetrize(&(&g + &a * &w * &g * a.transpose()));
        let a_next = &a * &w_a;
        if !h_next.iter().all(|v| v.is_finite()) || h_next.norm() > DIVERGENCE_BOUND {
            return (None, k);
        }
        if !margin_ok(gamma, &h_next) {
            return (None, k);
        }
        if converged(&h, &h_next) {
            return (Some(h_next), k);
        }
        a = a_next;
        g = g_next;
        h = h_next;
    }
    (None, MAX_DOUBLINGS)
}

/// Bisection on `gamma` over [`hinf_feasible`]. The upper end starts at
/// twice a 128-point grid estimate.
pub fn hinf_norm_bisect(plant: &Plant, policy: &Policy, tol: f64) -> Result<NormResult> {
    hinf_norm_bisect_with(plant, policy, tol, &RiccatiConfig::default())
}

pub fn hinf_norm_bisect_with(
    plant: &Plant,
    policy: &Policy,
    tol: f64,
    cfg: &RiccatiConfig,
) -> Result<NormResult> {
    if !(tol > 0.0) {
        return Err(HinfError::Argument("bisection tolerance must be positive".into()));
    }
    let cl = assemble_closed_loop(plant, policy)?;
    let coarse = hinf_norm_grid(&cl, 128, 1e-3)?;
    let mut lo = 0.0;
    let mut hi = 2.0 * coarse.value;
    let mut expansions = 0;
    while !hinf_feasible_with(plant, policy, hi, cfg)?.feasible {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 60 {
            return Err(HinfError::Oracle("bisection could not bracket the norm".into()));
        }
    }
    while hi - lo >= tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if hinf_feasible_with(plant, policy, mid, cfg)?.feasible {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(NormResult {
        value: 0.5 * (lo + hi),
        peak_frequency: coarse.peak_frequency,
        method: NormMethod::Bisection,
        tolerance: tol,
        grid_size: None,
    })
}

/// Largest eigenvalue of the bounded-real block matrix
///
/// ```text
/// [ A^T P A - P + C^T C   A^T P          ]
/// [ P A                   P - gamma^2 I  ]
/// ```
///
/// A value `<= 1e-8` with `P > 0` certifies `J <= gamma`.
pub fn verify_bounded_real(cl: &ClosedLoop, gamma: f64, p: &DMatrix<f64>) -> Result<f64> {
    let n = cl.n();
    if p.shape() != (n, n) {
        return Err(HinfError::Dimension(format!("P must be {n}x{n}")));
    }
    if !(gamma > 0.0) {
        return Err(HinfError::Argument("gamma must be positive".into()));
    }
    let p = symmetrize(p);
    let a = cl.a();
    let c = cl.c();
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block
        .view_mut((0, 0), (n, n))
        .copy_from(&(a.transpose() * &p * a - &p + c.transpose() * c));
    let off = a.transpose() * &p;
    block.view_mut((0, n), (n, n)).copy_from(&off);
    block.view_mut((n, 0), (n, n)).copy_from(&off.transpose());
    block
        .view_mut((n, n), (n, n))
        .copy_from(&(&p - DMatrix::identity(n, n) * (gamma * gamma)));
    Ok(SymmetricEigen::new(symmetrize(&block)).eigenvalues.max())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use crate::hinf::norm::{hinf_norm_grid, DEFAULT_COARSE_POINTS, DEFAULT_REFINE_TOL};
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn scalar_plant() -> (Plant, Policy) {
        // a = 0.5, b = 1, q = r = 1 with k = 0: closed loop 0.5, c = 1.
        let plant = Plant::new(dmatrix![0.5], dmatrix![1.0], dmatrix![1.0], dmatrix![1.0]).unwrap();
        (plant, Policy::new(dmatrix![0.0]))
    }

    fn grid_value(plant: &Plant, policy: &Policy) -> f64 {
        let cl = assemble_closed_loop(plant, policy).unwrap();
        hinf_norm_grid(&cl, DEFAULT_COARSE_POINTS, DEFAULT_REFINE_TOL).unwrap().value
    }

    #[test]
    fn zero_and_small_gamma_are_infeasible() {
        let (plant, k0) = examples::example13();
        assert!(!hinf_feasible(&plant, &k0, 0.0).unwrap().feasible);
        // lambda_min(Q)^{1/2} lower-bounds J.
        let qmin = SymmetricEigen::new(plant.q().clone()).eigenvalues.min().sqrt();
        assert!(!hinf_feasible(&plant, &k0, 0.99 * qmin).unwrap().feasible);
    }

    #[test]
    fn verdict_brackets_grid_value() {
        let (plant, k0) = examples::example13();
        let j = grid_value(&plant, &k0);
        for scheme in [RiccatiScheme::FixedPoint, RiccatiScheme::Doubling] {
            let cfg = RiccatiConfig { scheme, ..Default::default() };
            let above = hinf_feasible_with(&plant, &k0, 1.1 * j, &cfg).unwrap();
            assert!(above.feasible, "{scheme:?}");
            let p = above.p.as_ref().unwrap();
            assert!(min_eigenvalue(p) > 0.0);
            assert!(above.residual <= 1e-9 * (1.0 + p.norm()), "{}", above.residual);
            assert!(!hinf_feasible_with(&plant, &k0, 0.9 * j, &cfg).unwrap().feasible, "{scheme:?}");
        }
    }

    #[test]
    fn doubling_reproduces_fixed_point_solution() {
        let (plant, k0) = examples::example_d1();
        let j = grid_value(&plant, &k0);
        let fp = hinf_feasible_with(
            &plant,
            &k0,
            1.2 * j,
            &RiccatiConfig { scheme: RiccatiScheme::FixedPoint, max_iters: 200_000 },
        )
        .unwrap();
        let db = hinf_feasible(&plant, &k0, 1.2 * j).unwrap();
        assert!(fp.feasible && db.feasible);
        let (pf, pd) = (fp.p.unwrap(), db.p.unwrap());
        assert!((&pf - &pd).norm() <= 1e-7 * pd.norm(), "{}", (&pf - &pd).norm());
        assert!(db.iterations < fp.iterations);
    }

    #[test]
    fn unstable_policy_is_an_error() {
        let (plant, k0) = examples::example13();
        let far = Policy::new(k0.gain() * 100.0);
        assert!(matches!(hinf_feasible(&plant, &far, 10.0), Err(HinfError::Unstable { .. })));
        assert!(matches!(hinf_norm_bisect(&plant, &far, 1e-6), Err(HinfError::Unstable { .. })));
    }

    #[test]
    fn bisection_on_scalar_loop() {
        let (plant, k) = scalar_plant();
        let res = hinf_norm_bisect(&plant, &k, 1e-8).unwrap();
        assert!((res.value - 2.0).abs() <= 2e-8, "{}", res.value);
        assert_eq!(res.method, NormMethod::Bisection);
    }

    #[test]
    fn bisection_matches_grid_on_paper_instances() {
        for (plant, k0) in [examples::example13(), examples::example_d1()] {
            let grid = grid_value(&plant, &k0);
            let bis = hinf_norm_bisect(&plant, &k0, 1e-9).unwrap().value;
            assert!((grid - bis).abs() <= 1e-6 + 1e-9, "grid {grid} bisect {bis}");
        }
    }

    #[test]
    fn bounded_real_certificate_from_riccati_solution() {
        let (plant, k0) = examples::example13();
        let j = grid_value(&plant, &k0);
        let gamma = 1.05 * j;
        let cert = hinf_feasible(&plant, &k0, gamma).unwrap();
        let cl = assemble_closed_loop(&plant, &k0).unwrap();
        let res = verify_bounded_real(&cl, gamma, cert.p.as_ref().unwrap()).unwrap();
        assert!(res <= 1e-8, "residual {res}");
    }

    #[test]
    fn bounded_real_trivial_cases() {
        let cl = ClosedLoop::from_parts(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let res = verify_bounded_real(&cl, 1e6, &DMatrix::identity(2, 2)).unwrap();
        assert!(res <= 0.0);

        let (plant, k0) = examples::example13();
        let cl = assemble_closed_loop(&plant, &k0).unwrap();
        let res = verify_bounded_real(&cl, 10.0, &DMatrix::zeros(3, 3)).unwrap();
        let top = SymmetricEigen::new(plant.stage_weight(k0.gain()).unwrap()).eigenvalues.max();
        assert_relative_eq!(res, top, max_relative = 1e-10);
    }
}
