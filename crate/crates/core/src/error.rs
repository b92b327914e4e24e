use thiserror::Error;

use crate::kernel::Smoothness;

pub type Result<T, E = NndpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NndpError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unsupported Matérn smoothness nu = {0}; supported values are 1/2, 3/2, 5/2 or RBF")]
    UnsupportedSmoothness(f64),

    #[error("kernel {0} is not mean-square differentiable")]
    NotDifferentiable(Smoothness),

    #[error("direction must have unit norm, got norm {0}")]
    InvalidDirection(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("duplicate locations at input rows {first} and {second}")]
    DuplicateLocation { first: usize, second: usize },

    #[error("location coincides with reference site {0}; use the reference-site path")]
    CoincidesWithReference(usize),

    #[error("location is equidistant to reference sites {first} and {second} (degenerate set Z1)")]
    EquidistantQuery { first: usize, second: usize },

    #[error("value/gradient covariance at the same off-reference location does not exist (degenerate set Z2)")]
    CoincidentNewPair,

    #[error("singular neighbor system at site {site} after jitter up to {jitter:e}")]
    SingularNeighborSystem { site: usize, jitter: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("problem size {n} exceeds the exact-inference cap {cap}")]
    CapExceeded { n: usize, cap: usize },

    #[error("length mismatch in {what}: expected {expected}, found {found}")]
    LengthMismatch { what: &'static str, expected: usize, found: usize },

    #[error("zero variance input to correlation")]
    ZeroVariance,

    #[error("missing direction {0} for gradient magnitude")]
    MissingDirection(String),

    #[error("line {line}: {message}")]
    Schema { line: u64, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl NndpError {
    pub fn schema(line: u64, message: impl Into<String>) -> Self {
        Self::Schema { line, message: message.into() }
    }
}
