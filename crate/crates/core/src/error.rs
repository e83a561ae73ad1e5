use thiserror::Error;

#[derive(Debug, Error)]
pub enum MilError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("structural inconsistency: {0}")]
    Consistency(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl MilError {
    /// True for errors caused by invalid user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            MilError::Config(_) | MilError::Consistency(_) | MilError::Shape { .. } | MilError::Domain(_) | MilError::UndefinedMetric(_)
        )
    }
}

pub type Result<T, E = MilError> = std::result::Result<T, E>;

pub(crate) fn ensure_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(MilError::Shape { expected, got })
    }
}
