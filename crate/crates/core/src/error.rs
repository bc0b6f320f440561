use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mode index {index} out of range for a {modes}-mode state")]
    ModeOutOfRange { index: usize, modes: usize },

    #[error("unphysical state: {0}")]
    UnphysicalState(String),

    #[error("degenerate state: {0}")]
    DegenerateState(String),

    #[error("singular matrix in {context}")]
    Singular { context: String },

    /// Finite-precision failure: cancellation in a sum of exponentials ate the
    /// result, or a probability/overlap left its admissible range.
    #[error("numerical stability: {0}")]
    NumericalStability(String),

    #[error("rank reduction failed: {0}")]
    ReductionFailed(String),

    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("serialization: {0}")]
    Serialization(String),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Serialization(_) => 2,
            Error::BudgetExceeded(_) => 4,
            Error::ModeOutOfRange { .. } => 2,
            _ => 3,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
