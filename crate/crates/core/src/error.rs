use thiserror::Error;

#[derive(Debug, Error)]
pub enum KcmError {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("non-finite numeric input: {0}")]
    NumericInput(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),

    #[error(
        "ill-posed moment system: reciprocal condition number {rcond:e} is below {threshold:e}"
    )]
    IllPosed { rcond: f64, threshold: f64 },

    #[error("regularized solve failed: {0}")]
    Regularization(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KcmError>;

impl From<serde_json::Error> for KcmError {
    fn from(e: serde_json::Error) -> Self {
        KcmError::Parse(e.to_string())
    }
}

impl From<csv::Error> for KcmError {
    fn from(e: csv::Error) -> Self {
        KcmError::Parse(e.to_string())
    }
}
