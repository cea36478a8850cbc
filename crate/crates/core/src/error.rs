use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Non-finite marginal likelihood during EM.
    #[error("numerical failure at EM cycle {cycle}: {detail}")]
    NumericalFailure { cycle: usize, detail: String },

    /// The M-step could not improve or evaluate an item's objective.
    #[error("numerical failure for item {item}: {detail}")]
    ItemFailure { item: String, detail: String },

    #[error("degenerate grouping: {0}")]
    DegenerateGrouping(String),

    #[error("provider error for snippet {snippet}: {message}")]
    Provider { snippet: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the data or the numerics rather than by
    /// malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::InsufficientData(_) | Error::NumericalFailure { .. } | Error::ItemFailure { .. }
        )
    }
}
