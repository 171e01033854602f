use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },
    #[error("invalid norm: {0}")]
    InvalidNorm(String),
    #[error("could not parse norm spec `{0}`")]
    NormSpec(String),
    #[error("operation requires a symmetric norm, got {0}")]
    NotSymmetric(String),
    #[error("norm `{0}` has no passing symmetry validation report")]
    NotValidated(String),
    #[error("level {0} must lie in (0, 1]")]
    LevelOutOfRange(f64),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("support point {index} has norm {norm} outside the unit ball")]
    OutsideBall { index: usize, norm: f64 },
    #[error("distribution has no exact expectation")]
    NoExactMean,
    #[error("query budget of {budget} exhausted")]
    BudgetExhausted { budget: usize },
    #[error("query budget insufficient: need {needed}, have {available}")]
    BudgetInsufficient { needed: usize, available: usize },
    #[error("query returned {value}, outside [{lo}, {hi}]")]
    QueryOutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("operation requires a {expected} oracle")]
    WrongOracle { expected: &'static str },
    #[error("invalid oracle parameter: {0}")]
    InvalidOracle(String),
    #[error("reconciliation balls are disjoint: box point at l2 distance {distance} > {radius}")]
    Disjoint { distance: f64, radius: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid witness: {0}")]
    InvalidWitness(String),
    #[error("eps0 = {eps0} too large, must be at most {max}")]
    Eps0TooLarge { eps0: f64, max: f64 },
    #[error("exact enumeration limited to {max} items, got {got}")]
    EnumerationTooLarge { max: usize, got: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("json: {0}")]
    Json(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}
