use thiserror::Error;

/// Errors produced anywhere in the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("missing derivative `{0}` required for the requested mode")]
    MissingDerivative(&'static str),

    #[error("missing constant `{0}` in the constants ledger")]
    MissingConstant(&'static str),

    #[error("non-finite value encountered in {context}")]
    NonFiniteValue { context: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("dimension unsupported: {0}")]
    DimensionUnsupported(String),

    #[error("unsupported weighting for exact transport: {0}")]
    UnsupportedWeighting(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular v-Hessian (smallest eigenvalue {min_eigenvalue:e})")]
    SingularHessian { min_eigenvalue: f64 },

    #[error("stale minimizer: stationarity residual {residual:e} exceeds {limit:e}")]
    StaleMinimizer { residual: f64, limit: f64 },

    #[error("(D_v b)(D_v b)^T has eigenvalue {min_eigenvalue:e} below lambda_b/2 = {bound:e} at t = {t}, x = {x:?}, v = {v:?}")]
    SingularDvb {
        min_eigenvalue: f64,
        bound: f64,
        t: f64,
        x: Vec<f64>,
        v: Vec<f64>,
    },

    #[error("regression design is rank deficient")]
    RankDeficient,

    #[error("non-positive denominator {0:e} in the anti-monotonicity constant")]
    NonPositiveDenominator(f64),

    #[error("Riccati trajectory exceeded {0:e}")]
    RiccatiBlowup(f64),

    #[error("FBSDE solver did not converge after {sweeps} sweeps (last residual {residual:e})")]
    SolverNoConvergence { sweeps: usize, residual: f64 },

    #[error(
        "continuation failed at gamma = {gamma_failed}; largest solved gamma = {gamma_reached}"
    )]
    StageFailure {
        gamma_reached: f64,
        gamma_failed: f64,
        residuals: Vec<f64>,
    },

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFiniteValue {
            context: context.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
