use thiserror::Error;

pub type Result<T, E = HsaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HsaError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("{stage} construction failed after {attempts} attempts: {reason}")]
    ConstructionFailed { stage: &'static str, attempts: usize, reason: String },

    #[error("{missing} relays missing but the code tolerates only {tolerated}")]
    TooManyMissing { missing: usize, tolerated: usize },

    #[error("only {received} relay messages arrived; decoding needs {required}")]
    InsufficientRelays { received: usize, required: usize },

    #[error("lifted entry {value} at position {index} exceeds the largest possible sum {max}")]
    OutOfRange { index: usize, value: u64, max: u64 },

    #[error("enumeration of {size} outcomes exceeds the limit of {limit}")]
    TooLarge { size: u128, limit: u128 },

    #[error("sweep of {required} episodes exceeds the budget of {budget}")]
    BudgetExceeded { required: usize, budget: usize },

    #[error("vector file: {0}")]
    VectorFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
