use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid coordinate")]
    InvalidCoordinate,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no centers")]
    NoCenters,

    #[error("out of universe")]
    OutOfUniverse,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("privacy budget exhausted: {label} requested {requested}, {remaining} remaining")]
    BudgetExhausted {
        label: String,
        requested: f64,
        remaining: f64,
    },

    #[error("memory overflow at round {round}, machine {machine}")]
    MemoryOverflow { round: usize, machine: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
