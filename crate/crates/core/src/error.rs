use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("kernel is singular on the diagonal (s = t = {0})")]
    SingularAtDiagonal(f64),

    #[error("({s}, {t}) lies outside the simplex 0 <= s <= t <= {horizon}")]
    OutOfDomain { s: f64, t: f64, horizon: f64 },

    #[error("variance-matched weights need 2*alpha < 1, got alpha = {0}")]
    VarianceMatchedUndefined(f64),

    #[error(
        "quadrature did not reach relative tolerance {tol:e} on [{a}, {b}] (estimate {estimate}, error {error:e})"
    )]
    QuadratureFailure {
        a: f64,
        b: f64,
        estimate: f64,
        error: f64,
        tol: f64,
    },

    #[error("smooth-kernel assumptions cannot be checked on a singular kernel")]
    SingularKernelRejected,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("diffusion family depends on the law but no measure was supplied")]
    MeasureRequired,

    #[error("sample sizes differ: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("exact assignment is limited to {limit} points, got {n}; use the sliced estimator")]
    TooLarge { n: usize, limit: usize },

    #[error("non-finite state at path {path}, step {step}")]
    NonFiniteState { path: usize, step: usize },

    #[error("diagnostic not applicable: {0}")]
    InvalidDiagnostic(String),

    #[error("Picard iteration did not converge after {} iterations (last gap {:e})", gap_history.len(), gap_history.last().copied().unwrap_or(f64::NAN))]
    NotConverged { gap_history: Vec<f64> },

    #[error("inadmissible configuration: {0}")]
    Admissibility(String),

    #[error("reference cloud of {m_law} points is too small for N = {n} (need at least 4N)")]
    ReferenceTooSmall { m_law: usize, n: usize },

    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),

    #[error("need at least {needed} paths, got {got}")]
    InsufficientPaths { needed: usize, got: usize },

    #[error("xi must lie in [0, 1/2], got {0}")]
    XiOutOfRange(f64),

    #[error("no sub-interval of ({lo}, {hi}) satisfies the mollifier bound for n = {n}")]
    InfeasibleBound { lo: f64, hi: f64, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by the user's input rather than by the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Json(_)
                | Error::Admissibility(_)
                | Error::InvalidParameter(_)
                | Error::NonPositiveEpsilon(_)
                | Error::XiOutOfRange(_)
                | Error::ReferenceTooSmall { .. }
                | Error::DimensionMismatch { .. }
        )
    }
}
