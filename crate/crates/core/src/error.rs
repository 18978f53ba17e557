use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no relative degree up to r_max = {0}")]
    NoRelativeDegree(usize),

    #[error("ill-conditioned relative degree: |CA^{power}B| = {norm:e} lies in the ambiguous band")]
    IllConditionedRelativeDegree { power: usize, norm: f64 },

    #[error("delays are not strictly increasing and positive: {0:?}")]
    InvalidDelays(Vec<u32>),

    #[error("singular Taylor matrix: {0}")]
    SingularTaylorMatrix(String),

    #[error("h = {h} too large for delay rule (floor = 0)")]
    SamplingTooLarge { h: f64 },

    #[error("variable layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("numerical breakdown: {0}")]
    Numerical(String),

    #[error("infeasible range: feasibility fails at the lower end {0}")]
    InfeasibleRange(f64),

    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
