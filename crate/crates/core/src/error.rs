use thiserror::Error;

/// Errors raised by graph construction, problem evaluation, solvers and certification.
#[derive(Debug, Error)]
pub enum Error {
    #[error("topology error: {0}")]
    Topology(String),

    #[error("weight error: edge ({i}, {j}) has non-positive weight {weight}")]
    Weight { i: usize, j: usize, weight: f64 },

    #[error("graph is disconnected: dim Null(L) = {null_dim}, expected 1")]
    Disconnected { null_dim: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("penalty parameter must be non-negative, got {0}")]
    NegativePenalty(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("missing capability: {0}")]
    MissingCapability(String),

    #[error("not a stationary point: KKT residual {residual:e} exceeds {tol:e}")]
    NotStationary { residual: f64, tol: f64 },

    #[error("step-size certification failed: {0}")]
    CertificationFailure(String),

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("constraint gradients are rank deficient (smallest singular value {sigma_min:e})")]
    RankDeficientConstraints { sigma_min: f64 },

    #[error("augmented Hessian is singular at c = {c}; increase the penalty")]
    NeedLargerPenalty { c: f64 },

    #[error("inner minimization diverged at outer iteration {outer}, inner iteration {inner}; reduce the inner step size")]
    InnerDivergence { outer: usize, inner: usize },

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("inconsistent multiplier system: residual {residual:e}")]
    InconsistentMultipliers { residual: f64 },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
