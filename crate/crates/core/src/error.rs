use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid tensor layout: {0}")]
    InvalidLayout(String),
    #[error("unknown tensor factor `{0}`")]
    UnknownFactor(String),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operator is not Hermitian (deviation {0:e})")]
    NotHermitian(f64),
    #[error("operator is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("trace {0} exceeds 1")]
    TraceTooLarge(f64),
    #[error("operator is zero on its whole space")]
    ZeroOperator,
    #[error("smoothing parameter {0} outside its admissible range")]
    InvalidEpsilon(f64),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("alphabet mismatch: {0}")]
    AlphabetMismatch(String),
    #[error("support violation: {0}")]
    SupportViolation(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("size cap exceeded: {0}")]
    CapExceeded(String),
    #[error("not a projector")]
    NotAProjector,
    #[error("map is not trace non-increasing (excess {0:e})")]
    NotTraceNonIncreasing(f64),
}

pub type Result<T> = core::result::Result<T, Error>;
