use thiserror::Error;

/// Crate-wide error type. The CLI maps [`Error::category`] onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or arguments (bad split counts, unknown kinds,
    /// out-of-range hyperparameters).
    #[error("config error: {0}")]
    Config(String),

    /// Problems with data sources: missing classes, empty splits,
    /// unreadable files, schema violations.
    #[error("data error: {0}")]
    Data(String),

    /// Tensor shape or batch-alignment mismatches.
    #[error("shape error: {0}")]
    Shape(String),

    /// A call that violates an operation's precondition (duplicate task
    /// ingestion, missing previous snapshot, wrong strategy).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The training loss became non-finite. Carries a diagnostic dump of
    /// the step's loss breakdown.
    #[error("non-finite loss at task {task} epoch {epoch} step {step}: {detail}")]
    NonFiniteLoss {
        task: usize,
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    /// Coarse category used for process exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::Data(_) | Error::Shape(_) => ErrorCategory::Data,
            _ => ErrorCategory::Runtime,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Runtime,
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialize(e.to_string())
    }
}
