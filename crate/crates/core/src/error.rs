use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Input outside the admissible parameter or state domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A requested feature is not available for this model or utility.
    #[error("unsupported: {0}")]
    Capability(String),

    /// Evaluation outside the range covered by a numerical grid.
    #[error("out of range: {0}")]
    Range(String),

    /// A numerical procedure produced an unusable result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An internal consistency check between two construction routes failed.
    #[error("consistency check failed: {0}")]
    Consistency(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn ensure_positive(value: f64, name: &str) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {value}")))
    }
}
