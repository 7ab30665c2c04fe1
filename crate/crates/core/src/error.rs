use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate vector at index {index}: residual norm {residual:.3e} below floor")]
    DegenerateVector { index: usize, residual: f64 },
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("unknown oracle `{0}`")]
    UnknownOracle(String),
    #[error("unknown register `{0}`")]
    UnknownRegister(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("circuit too wide: {qubits} qubits exceeds cap {cap}")]
    TooWide { qubits: usize, cap: usize },
    #[error("invalid delta {0}: must be positive")]
    InvalidDelta(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("estimation failure: {0}")]
    EstimationFailure(String),
    #[error("non-orthogonal input: {0}")]
    NonOrthogonalInput(String),
    #[error("invariant violated: {0}")]
    InvariantViolated(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
