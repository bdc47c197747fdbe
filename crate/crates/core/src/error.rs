use thiserror::Error;

/// Which end of the real line a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Minus,
    Plus,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Minus => write!(f, "-inf"),
            Side::Plus => write!(f, "+inf"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    /// (H2) fails: the limit matrix at one end is not positive definite, so the
    /// essential spectrum already reaches into the unstable half-line.
    #[error("hypothesis H2 violated at {side}: smallest eigenvalue of the limit potential is {min_eigenvalue:.6e} (essential spectrum is not positive)")]
    EssentialSpectrum { side: Side, min_eigenvalue: f64 },

    #[error("steady-state residual {residual:.3e} at x = {x:.6} exceeds tolerance {tol:.3e}")]
    SteadyStateResidual { residual: f64, x: f64, tol: f64 },

    #[error("generalized eigenvalue {mu:.6e} of the asymptotic system is not positive")]
    NonHyperbolic { mu: f64 },

    #[error("step size underflow at x = {x:.12}")]
    StepUnderflow { x: f64 },

    #[error("maximum number of integration steps exceeded at x = {x:.6}")]
    TooManySteps { x: f64 },

    #[error("Lagrangian residual {residual:.3e} at x = {x:.6} exceeds {limit:.3e}; integration unreliable")]
    LagrangianDrift { x: f64, residual: f64, limit: f64 },

    #[error("monotonicity violated: crossing form at {location:.9} has eigenvalue {min_eigenvalue:.3e}")]
    MonotonicityViolated { location: f64, min_eigenvalue: f64 },

    #[error("decay fit failed on the {side} tail: {reason}; pass an explicit x_min")]
    DecayFit { side: Side, reason: String },

    #[error("no stabilization after {doublings} domain doublings (last L = {last_l}); try a larger domain")]
    NotStabilized { doublings: usize, last_l: f64 },

    #[error("Maslov identity violated: {0}")]
    Identity(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag, used in error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::InvalidProblem(_) => "invalid-problem",
            Error::EssentialSpectrum { .. } => "essential-spectrum",
            Error::SteadyStateResidual { .. } => "steady-state-residual",
            Error::NonHyperbolic { .. } => "non-hyperbolic",
            Error::StepUnderflow { .. } => "step-underflow",
            Error::TooManySteps { .. } => "too-many-steps",
            Error::LagrangianDrift { .. } => "lagrangian-drift",
            Error::MonotonicityViolated { .. } => "monotonicity-violated",
            Error::DecayFit { .. } => "decay-fit",
            Error::NotStabilized { .. } => "not-stabilized",
            Error::Identity(_) => "identity-violation",
            Error::Precondition(_) => "precondition",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
