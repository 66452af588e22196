use thiserror::Error;

/// Errors raised anywhere in the synthesis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid value: {0}")]
    Value(String),

    #[error("schema error at `{path}`: {reason}")]
    Schema { path: String, reason: String },

    #[error("quadrature failed after {panels} panels (last estimate {estimate:e}); widen tolerances")]
    QuadratureFailure { panels: usize, estimate: f64 },

    #[error("no sign change for p = {p} within mean +/- 64 stddev")]
    BracketFailure { p: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("function is not concave near x = {x}: approximation error {err:e}")]
    NonConcaveInput { x: f64, err: f64 },

    #[error("slope bisection cannot bracket m = {m} on [{lo}, {hi}]")]
    BreakpointFailure { lo: f64, hi: f64, m: f64 },

    #[error("constraint row {row} cannot reach the minimum probability level")]
    RowInfeasible { row: usize },

    #[error("constraint row {row} has a deterministic left-hand side")]
    DegenerateRow { row: usize },

    #[error("disturbance component {0} is not Gaussian")]
    NotGaussian(usize),

    #[error("risk budget {0} exceeds 0.5")]
    DeltaTooLarge(f64),

    #[error("non-finite iterate in QP solver")]
    NumericalBreakdown,

    #[error("QP subproblem failed at CCP iteration {iteration}: {reason}")]
    SubproblemFailed { iteration: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
