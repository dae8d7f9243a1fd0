use thiserror::Error;

pub type Result<T> = std::result::Result<T, PeftError>;

#[derive(Debug, Error)]
pub enum PeftError {
    /// Operand shapes do not conform. `operand` names the offending input.
    #[error("dimension mismatch in {operand}: expected {expected}, got {actual}")]
    Dimension {
        operand: &'static str,
        expected: String,
        actual: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("undefined correlation: both vectors are constant")]
    UndefinedCorrelation,

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PeftError {
    pub(crate) fn dim(operand: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        PeftError::Dimension {
            operand,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        PeftError::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        PeftError::Input(msg.into())
    }
}
