use thiserror::Error;

/// Errors raised by the oracles, solvers and file readers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum HinfError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid value: {0}")]
    Value(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// The closed loop `A - BK` is not Schur stable. The cost is `+inf` there.
    #[error("policy not stabilizing: rho={rho}")]
    Unstable { rho: f64 },

    /// The cost is (numerically) not differentiable at the requested point.
    #[error("nondifferentiable point: {0}")]
    NonDifferentiable(String),

    /// A point sampled from a policy ball left the stabilizing set.
    #[error("sampling ball of radius {radius} leaves the stabilizing set")]
    InfeasibleBall { radius: f64 },

    #[error("oracle failure: {0}")]
    Oracle(String),

    /// Every draw of a bundle kept landing on nondifferentiable points, which
    /// happens once the sampling radius is below the oracle's kink resolution.
    #[error("oracle failure: more than {redraws} nondifferentiable draws in one bundle")]
    RedrawLimit { redraws: usize },

    #[error("problem file field `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("random instance generation failed: {0}")]
    Generation(String),
}

pub type Result<T> = std::result::Result<T, HinfError>;
