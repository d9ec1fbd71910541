//! Gradient bundles and the minimum-norm element of their convex hull.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{HinfError, Result};
use crate::hinf::oracle::GradientOracle;

/// Total redraws allowed across one bundle before giving up.
pub const MAX_REDRAWS: usize = 100;
const WOLFE_MAX_ITERS: usize = 1000;
const WOLFE_GAP: f64 = 1e-12;

/// Sampled points around a center, their (generalized) gradients, and the
/// min-norm element of the gradients' convex hull.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub center: DMatrix<f64>,
    pub radius: f64,
    pub points: Vec<DMatrix<f64>>,
    pub gradients: Vec<DMatrix<f64>>,
    pub weights: Vec<f64>,
    pub min_norm: DMatrix<f64>,
}

impl Bundle {
    pub fn new(
        center: DMatrix<f64>,
        radius: f64,
        points: Vec<DMatrix<f64>>,
        gradients: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if points.len() != gradients.len() {
            return Err(HinfError::Dimension("one gradient per point required".into()));
        }
        let (min_norm, weights) = min_norm_point(&gradients)?;
        Ok(Self {
            center,
            radius,
            points,
            gradients,
            weights,
            min_norm,
        })
    }

    pub fn len(&self) -> usize {
        self.gradients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gradients.is_empty()
    }

    /// Frobenius norm of the min-norm element.
    pub fn min_norm_value(&self) -> f64 {
        self.min_norm.norm()
    }
}

/// Uniform draw from the Frobenius ball of radius `delta` around `center`.
pub fn sample_ball<R: Rng + ?Sized>(center: &DMatrix<f64>, delta: f64, rng: &mut R) -> DMatrix<f64> {
    let d = center.len();
    loop {
        let dir = DMatrix::<f64>::from_fn(center.nrows(), center.ncols(), |_, _| rng.sample(StandardNormal));
        let norm = dir.norm();
        if norm > 0.0 {
            let u: f64 = rng.random();
            let radius = delta * u.powf(1.0 / d as f64);
            return center + dir * (radius / norm);
        }
    }
}

/// Sample points and the probe value at each.
pub type Samples = (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>);

/// Draws `m` points in `B_delta(center)` and evaluates `probe` at each.
///
/// Points where `probe` reports a nondifferentiable point are redrawn. An
/// unstable point means the ball leaves the stabilizing set and is reported
/// as [`HinfError::InfeasibleBall`].
pub fn sample_bundle_with<R, F>(
    center: &DMatrix<f64>,
    delta: f64,
    m: usize,
    rng: &mut R,
    mut probe: F,
) -> Result<Samples>
where
    R: Rng + ?Sized,
    F: FnMut(&DMatrix<f64>, &mut R) -> Result<DMatrix<f64>>,
{
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(HinfError::Argument(format!("sampling radius must be positive, got {delta}")));
    }
    if m == 0 {
        return Err(HinfError::Argument("bundle size must be at least 1".into()));
    }
    let mut points = Vec::with_capacity(m);
    let mut values = Vec::with_capacity(m);
    let mut redraws = 0;
    while points.len() < m {
        let point = sample_ball(center, delta, rng);
        match probe(&point, rng) {
            Ok(v) => {
                points.push(point);
                values.push(v);
            }
            Err(HinfError::NonDifferentiable(_)) => {
                redraws += 1;
                if redraws > MAX_REDRAWS {
                    return Err(HinfError::RedrawLimit { redraws: MAX_REDRAWS });
                }
            }
            Err(HinfError::Unstable { .. }) => return Err(HinfError::InfeasibleBall { radius: delta }),
            Err(e) => return Err(e),
        }
    }
    Ok((points, values))
}

/// Gradient-sampling bundle of size `m` at radius `delta`.
pub fn sample_bundle<G, R>(
    grad: &G,
    center: &DMatrix<f64>,
    delta: f64,
    m: usize,
    rng: &mut R,
) -> Result<Bundle>
where
    G: GradientOracle + ?Sized,
    R: Rng + ?Sized,
{
    let (points, gradients) = sample_bundle_with(center, delta, m, rng, |k, _| grad.gradient(k))?;
    Bundle::new(center.clone(), delta, points, gradients)
}

/// Minimum-norm point of `conv{vectors}` by Wolfe's algorithm.
///
/// Returns the point and its barycentric weights.
pub fn min_norm_point(vectors: &[DMatrix<f64>]) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let first = vectors
        .first()
        .ok_or_else(|| HinfError::Argument("min-norm point of an empty set".into()))?;
    let shape = first.shape();
    if vectors.iter().any(|v| v.shape() != shape) {
        return Err(HinfError::Dimension("all bundle elements must share a shape".into()));
    }
    if vectors.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(HinfError::Value("bundle element has non-finite entries".into()));
    }
    let flat: Vec<DVector<f64>> = vectors.iter().map(|v| DVector::from_column_slice(v.as_slice())).collect();
    let weights = wolfe(&flat);
    let mut point = DMatrix::zeros(shape.0, shape.1);
    for (w, v) in weights.iter().zip(vectors) {
        point += v * *w;
    }
    Ok((point, weights))
}

fn combine(points: &[DVector<f64>], active: &[usize], lambda: &[f64]) -> DVector<f64> {
    let mut x = DVector::zeros(points[0].len());
    for (&i, &l) in active.iter().zip(lambda) {
        x.axpy(l, &points[i], 1.0);
    }
    x
}

/// Minimizer of `|sum mu_i p_i|` over the affine hull, `sum mu_i = 1`.
fn affine_minimizer(points: &[DVector<f64>], active: &[usize]) -> Vec<f64> {
    let k = active.len();
    if k == 1 {
        return vec![1.0];
    }
    let mut kkt = DMatrix::zeros(k + 1, k + 1);
    for a in 0..k {
        for b in a..k {
            let g = points[active[a]].dot(&points[active[b]]);
            kkt[(a, b)] = g;
            kkt[(b, a)] = g;
        }
        kkt[(a, k)] = 1.0;
        kkt[(k, a)] = 1.0;
    }
    let mut rhs = DVector::zeros(k + 1);
    rhs[k] = 1.0;
    let sol = kkt
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .unwrap_or_else(|| kkt.svd(true, true).solve(&rhs, 1e-14).expect("SVD solve"));
    let mu: Vec<f64> = sol.iter().take(k).copied().collect();
    let total: f64 = mu.iter().sum();
    mu.iter().map(|v| v / total).collect()
}

fn wolfe(points: &[DVector<f64>]) -> Vec<f64> {
    let m = points.len();
    let norms: Vec<f64> = points.iter().map(|p| p.norm_squared()).collect();
    let start = (0..m).min_by(|&a, &b| norms[a].total_cmp(&norms[b])).expect("nonempty");
    let mut active = vec![start];
    let mut lambda = vec![1.0];
    let mut x = points[start].clone();

    for _ in 0..WOLFE_MAX_ITERS {
        let xx = x.norm_squared();
        let (j, best) = (0..m)
            .map(|i| (i, x.dot(&points[i])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty");
        if best >= xx - WOLFE_GAP * (1.0 + xx) || active.contains(&j) {
            break;
        }
        active.push(j);
        lambda.push(0.0);

        loop {
            let mu = affine_minimizer(points, &active);
            if mu.iter().all(|&v| v > 1e-14) {
                lambda = mu;
                break;
            }
            let mut theta = 1.0f64;
            for (l, u) in lambda.iter().zip(&mu) {
                if *u <= 1e-14 && l - u > 0.0 {
                    theta = theta.min(l / (l - u));
                }
            }
            for (l, u) in lambda.iter_mut().zip(&mu) {
                *l = (1.0 - theta) * *l + theta * u;
            }
            let mut keep_active = Vec::with_capacity(active.len());
            let mut keep_lambda = Vec::with_capacity(active.len());
            for (&i, &l) in active.iter().zip(&lambda) {
                if l > 1e-14 {
                    keep_active.push(i);
                    keep_lambda.push(l);
                }
            }
            if keep_active.is_empty() {
                keep_active.push(j);
                keep_lambda.push(1.0);
            }
            let total: f64 = keep_lambda.iter().sum();
            active = keep_active;
            lambda = keep_lambda.iter().map(|l| l / total).collect();
            if active.len() == 1 {
                break;
            }
        }
        x = combine(points, &active, &lambda);
    }

    let mut weights = vec![0.0; m];
    for (&i, &l) in active.iter().zip(&lambda) {
        weights[i] = l;
    }
    weights
}
