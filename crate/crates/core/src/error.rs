use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not stochastic: {0}")]
    NonStochastic(String),

    #[error("chain is not irreducible: {0}")]
    NotIrreducible(String),

    #[error("symbol {symbol} outside 1..={alphabet}")]
    SymbolOutOfRange { symbol: usize, alphabet: usize },

    #[error("window too long: requested {requested}, available {available}")]
    WindowTooLong { requested: usize, available: usize },

    #[error("window too short: need {needed} symbols, have {available}")]
    WindowTooShort { needed: usize, available: usize },

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("vector must be strictly positive")]
    NonPositiveInput,

    #[error("determinant of the transition matrix is zero")]
    DegenerateDeterminant,

    #[error("direction is orthogonal to the all-ones vector")]
    DegenerateDirection,

    #[error("brute-force enumeration limited to n <= {max}, got {n}")]
    TooLarge { n: usize, max: usize },

    #[error("rate estimate needs at least {needed} uncensored points, found {found}")]
    InsufficientPoints { needed: usize, found: usize },

    #[error("degenerate binary chain parameters: {0}")]
    DegenerateParameters(String),

    #[error("epsilon must lie in (0,1) and differ from 1/2, got {0}")]
    InvalidEpsilon(f64),

    #[error("epsilon {epsilon} exceeds the provable threshold {eps0:e}")]
    OutsideValidity { epsilon: f64, eps0: f64 },

    #[error("fixed-point map failed to contract (observed factor {0})")]
    ContractionFailure(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
