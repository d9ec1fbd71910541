//! Plant and policy types, closed-loop assembly, stability tests and
//! time-domain simulation.
//!
//! The plant is `x_{t+1} = A x_t + B u_t + w_t` with `x_0 = 0` and the
//! disturbance entering through the identity. Under `u_t = -K x_t` the
//! closed loop maps `w` to `z_t = (Q + K^T R K)^{1/2} x_t`.

use nalgebra::{DMatrix, DVector, Schur};

use crate::error::{HinfError, Result};

/// Positive-definiteness floor for `Q` and `R`, scaled by the dimension.
pub const PD_TOL: f64 = 1e-10;

/// Synthesis instance `(A, B, Q, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl Plant {
    /// Validates dimensions, symmetry and positive definiteness of `Q` and `R`.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let n_x = a.nrows();
        if n_x == 0 || a.ncols() != n_x {
            return Err(HinfError::Dimension(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n_x || b.ncols() == 0 {
            return Err(HinfError::Dimension(format!(
                "B must be {n_x}xn_u with n_u >= 1, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        let n_u = b.ncols();
        if q.shape() != (n_x, n_x) {
            return Err(HinfError::Dimension(format!("Q must be {n_x}x{n_x}")));
        }
        if r.shape() != (n_u, n_u) {
            return Err(HinfError::Dimension(format!("R must be {n_u}x{n_u}")));
        }
        for (name, m) in [("A", &a), ("B", &b), ("Q", &q), ("R", &r)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(HinfError::Value(format!("{name} has non-finite entries")));
            }
        }
        check_spd("Q", &q)?;
        check_spd("R", &r)?;
        Ok(Self { a, b, q, r })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    /// Number of free policy parameters, `n_x * n_u`.
    pub fn policy_dim(&self) -> usize {
        self.n_x() * self.n_u()
    }

    pub fn check_gain(&self, k: &DMatrix<f64>) -> Result<()> {
        if k.shape() != (self.n_u(), self.n_x()) {
            return Err(HinfError::Dimension(format!(
                "K must be {}x{}, got {}x{}",
                self.n_u(),
                self.n_x(),
                k.nrows(),
                k.ncols()
            )));
        }
        Ok(())
    }

    /// `A - BK`.
    pub fn closed_loop_matrix(&self, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_gain(k)?;
        Ok(&self.a - &self.b * k)
    }

    /// `Q + K^T R K`.
    pub fn stage_weight(&self, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_gain(k)?;
        Ok(&self.q + k.transpose() * &self.r * k)
    }
}

fn check_spd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let n = m.nrows();
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(HinfError::Value(format!("{name} is not symmetric")));
    }
    let eig = nalgebra::SymmetricEigen::new(symmetrize(m));
    let min = eig.eigenvalues.min();
    if min <= PD_TOL * n as f64 {
        return Err(HinfError::Value(format!(
            "{name} is not positive definite (smallest eigenvalue {min:e})"
        )));
    }
    Ok(())
}

/// Linear state-feedback gain `u_t = -K x_t`, `K` is `n_u x n_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    k: DMatrix<f64>,
}

impl Policy {
    pub fn new(k: DMatrix<f64>) -> Self {
        Self { k }
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn into_gain(self) -> DMatrix<f64> {
        self.k
    }
}

impl From<DMatrix<f64>> for Policy {
    fn from(k: DMatrix<f64>) -> Self {
        Self::new(k)
    }
}

/// Closed-loop realization `(A - BK, I, (Q + K^T R K)^{1/2})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    a_cl: DMatrix<f64>,
    c_cl: DMatrix<f64>,
}

impl ClosedLoop {
    /// Builds a closed loop from its state matrix and output matrix. The
    /// input matrix is always the identity.
    pub fn from_parts(a_cl: DMatrix<f64>, c_cl: DMatrix<f64>) -> Result<Self> {
        let n = a_cl.nrows();
        if n == 0 || a_cl.ncols() != n {
            return Err(HinfError::Dimension("A_cl must be square and nonempty".into()));
        }
        if c_cl.ncols() != n || c_cl.nrows() == 0 {
            return Err(HinfError::Dimension(format!("C_cl must have {n} columns")));
        }
        if a_cl.iter().chain(c_cl.iter()).any(|v| !v.is_finite()) {
            return Err(HinfError::Value("closed loop has non-finite entries".into()));
        }
        Ok(Self { a_cl, c_cl })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a_cl
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c_cl
    }

    pub fn n(&self) -> usize {
        self.a_cl.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a_cl).expect("closed loop validated at construction")
    }
}

const SCHUR_TOLERANCES: [f64; 4] = [f64::EPSILON, 1e-14, 1e-12, 1e-10];
const SCHUR_MAX_ITERS: usize = 200;

/// `max |lambda_i(M)|` over all eigenvalues of a real square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(HinfError::Dimension(format!(
            "spectral radius needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(HinfError::Value("matrix has non-finite entries".into()));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    for eps in SCHUR_TOLERANCES {
        if let Some(schur) = Schur::try_new(m.clone(), eps, SCHUR_MAX_ITERS * m.nrows()) {
            return Ok(schur.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max));
        }
    }
    Err(HinfError::Value("eigenvalue iteration did not converge".into()))
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric PSD square root via eigendecomposition of the symmetrized
/// input. Eigenvalues in `[-1e-8 * ||M||, 0)` are clamped to zero.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(HinfError::Dimension("sqrt_psd needs a square matrix".into()));
    }
    let eig = nalgebra::SymmetricEigen::new(symmetrize(m));
    let scale = eig.eigenvalues.amax();
    let mut roots = eig.eigenvalues.clone();
    for l in roots.iter_mut() {
        if *l < -1e-8 * scale {
            return Err(HinfError::Value(format!(
                "matrix is not positive semidefinite (eigenvalue {l:e})"
            )));
        }
        *l = l.max(0.0).sqrt();
    }
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// `A_cl = A - BK` and `C_cl = (Q + K^T R K)^{1/2}`.
pub fn assemble_closed_loop(plant: &Plant, policy: &Policy) -> Result<ClosedLoop> {
    let a_cl = plant.closed_loop_matrix(policy.gain())?;
    let c_cl = sqrt_psd(&plant.stage_weight(policy.gain())?)?;
    ClosedLoop::from_parts(a_cl, c_cl)
}

/// `rho(A - BK) < 1 - margin`.
pub fn is_stabilizing_with_margin(plant: &Plant, policy: &Policy, margin: f64) -> Result<bool> {
    let rho = spectral_radius(&plant.closed_loop_matrix(policy.gain())?)?;
    Ok(rho < 1.0 - margin)
}

pub fn is_stabilizing(plant: &Plant, policy: &Policy) -> Result<bool> {
    is_stabilizing_with_margin(plant, policy, 0.0)
}

/// Errors with [`HinfError::Unstable`] unless `rho(A - BK) < 1`.
pub(crate) fn require_stable(plant: &Plant, k: &DMatrix<f64>) -> Result<f64> {
    let rho = spectral_radius(&plant.closed_loop_matrix(k)?)?;
    if rho < 1.0 {
        Ok(rho)
    } else {
        Err(HinfError::Unstable { rho })
    }
}

/// Trajectory of `x_{t+1} = A_cl x_t + w_t`, `z_t = C_cl x_t` from `x_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
}

impl Trajectory {
    /// `sum_t ||z_t||^2`.
    pub fn output_energy(&self) -> f64 {
        self.z.iter().map(|z| z.norm_squared()).sum()
    }
}

/// Simulates the closed loop over the horizon `T = w.len()`. Returns the
/// states `x_0..x_{T-1}` and outputs `z_0..z_{T-1}`.
pub fn simulate(cl: &ClosedLoop, w: &[DVector<f64>]) -> Result<Trajectory> {
    if w.is_empty() {
        return Err(HinfError::Argument("simulation horizon must be at least 1".into()));
    }
    let n = cl.n();
    if let Some(bad) = w.iter().find(|wt| wt.len() != n) {
        return Err(HinfError::Dimension(format!(
            "disturbance samples must have length {n}, got {}",
            bad.len()
        )));
    }
    let mut x = Vec::with_capacity(w.len());
    let mut z = Vec::with_capacity(w.len());
    let mut state = DVector::zeros(n);
    for wt in w {
        z.push(cl.c() * &state);
        let next = cl.a() * &state + wt;
        x.push(std::mem::replace(&mut state, next));
    }
    Ok(Trajectory { x, z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn spectral_radius_of_identity() {
        assert_relative_eq!(spectral_radius(&DMatrix::identity(3, 3)).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn spectral_radius_rejects_bad_input() {
        assert!(matches!(
            spectral_radius(&DMatrix::zeros(2, 3)),
            Err(HinfError::Dimension(_))
        ));
        let mut m = DMatrix::<f64>::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(spectral_radius(&m), Err(HinfError::Value(_))));
    }

    #[test]
    fn spectral_radius_of_paper_initial_gains() {
        let (plant, k0) = examples::example13();
        let rho = spectral_radius(&plant.closed_loop_matrix(k0.gain()).unwrap()).unwrap();
        assert!((rho - 0.5756).abs() <= 1e-4, "rho = {rho}");

        let (plant, k0) = examples::example_d1();
        let rho = spectral_radius(&plant.closed_loop_matrix(k0.gain()).unwrap()).unwrap();
        assert!((rho - 0.9567).abs() <= 1e-4, "rho = {rho}");
    }

    #[test]
    fn spectral_radius_scales_with_abs_alpha() {
        let m = dmatrix![0.3, -1.2, 0.5; 0.9, 0.1, -0.4; 0.0, 0.7, 0.2];
        let rho = spectral_radius(&m).unwrap();
        for alpha in [-2.0, 0.5] {
            let scaled = spectral_radius(&(&m * alpha)).unwrap();
            assert_relative_eq!(scaled, alpha.abs() * rho, max_relative = 1e-12);
        }
    }

    #[test]
    fn trivial_closed_loop_assembly() {
        let plant = Plant::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let cl = assemble_closed_loop(&plant, &Policy::new(DMatrix::zeros(1, 2))).unwrap();
        assert_eq!(cl.a(), &DMatrix::<f64>::zeros(2, 2));
        assert_relative_eq!(cl.c(), &DMatrix::<f64>::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn output_matrix_squares_to_stage_weight() {
        let (plant, k0) = examples::example13();
        let cl = assemble_closed_loop(&plant, &k0).unwrap();
        let s = plant.stage_weight(k0.gain()).unwrap();
        let err = (cl.c().transpose() * cl.c() - &s).norm();
        assert!(err <= 1e-10, "err = {err}");
        assert_relative_eq!(cl.c(), &cl.c().transpose(), epsilon = 1e-14);
    }

    #[test]
    fn sqrt_psd_rejects_indefinite() {
        let m = dmatrix![1.0, 0.0; 0.0, -1.0];
        assert!(matches!(sqrt_psd(&m), Err(HinfError::Value(_))));
    }

    #[test]
    fn stabilizing_checks() {
        let (plant, k0) = examples::example13();
        assert!(is_stabilizing(&plant, &k0).unwrap());
        let far = Policy::new(k0.gain() * 100.0);
        assert!(spectral_radius(&plant.closed_loop_matrix(far.gain()).unwrap()).unwrap() >= 1.0);
        assert!(!is_stabilizing(&plant, &far).unwrap());

        let ident = Plant::new(
            DMatrix::identity(3, 3),
            DMatrix::from_element(3, 1, 1.0),
            DMatrix::identity(3, 3),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        assert!(!is_stabilizing(&ident, &Policy::new(DMatrix::zeros(1, 3))).unwrap());
        // A margin tightens the test.
        assert!(!is_stabilizing_with_margin(&plant, &k0, 0.5).unwrap());
    }

    #[test]
    fn plant_validation() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::from_element(2, 1, 1.0);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1);
        assert!(Plant::new(a.clone(), b.clone(), q.clone(), r.clone()).is_ok());
        assert!(matches!(
            Plant::new(a.clone(), DMatrix::zeros(3, 1), q.clone(), r.clone()),
            Err(HinfError::Dimension(_))
        ));
        assert!(matches!(
            Plant::new(a.clone(), b.clone(), DMatrix::zeros(2, 2), r.clone()),
            Err(HinfError::Value(_))
        ));
        let asym = dmatrix![1.0, 0.5; 0.0, 1.0];
        assert!(matches!(Plant::new(a, b, asym, r), Err(HinfError::Value(_))));
    }

    #[test]
    fn simulate_one_step_delay() {
        let cl = ClosedLoop::from_parts(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let mut w = vec![DVector::zeros(2); 4];
        w[0][0] = 1.0;
        let traj = simulate(&cl, &w).unwrap();
        assert_eq!(traj.z[0], DVector::zeros(2));
        assert_eq!(traj.z[1], DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(traj.z[2], DVector::zeros(2));
    }

    #[test]
    fn simulate_scalar_geometric_response() {
        let cl = ClosedLoop::from_parts(dmatrix![0.5], dmatrix![1.0]).unwrap();
        let w: Vec<_> = [1.0, 0.0, 0.0, 0.0].iter().map(|&v| DVector::from_element(1, v)).collect();
        let traj = simulate(&cl, &w).unwrap();
        let z: Vec<f64> = traj.z.iter().map(|z| z[0]).collect();
        assert_eq!(z, vec![0.0, 1.0, 0.5, 0.25]);
        assert_eq!(traj.x.len(), 4);
    }

    #[test]
    fn simulate_rejects_empty_horizon() {
        let cl = ClosedLoop::from_parts(dmatrix![0.5], dmatrix![1.0]).unwrap();
        assert!(matches!(simulate(&cl, &[]), Err(HinfError::Argument(_))));
    }

    #[test]
    fn free_response_decays_geometrically() {
        let (plant, k0) = examples::example13();
        let cl = assemble_closed_loop(&plant, &k0).unwrap();
        let mut w = vec![DVector::zeros(3); 200];
        w[0] = DVector::from_vec(vec![1.0, -0.5, 0.25]);
        let traj = simulate(&cl, &w).unwrap();
        let early = traj.x[1].norm();
        let late = traj.x[101].norm();
        let rho = cl.spectral_radius();
        // ||A^100 x|| <= C * (rho + eps)^100 ||x|| for any eps > 0.
        assert!(late / early < (0.5 * (1.0 + rho)).powi(100) * 1e6, "{late} / {early}");
        assert!(late < 1e-10);
    }
}
