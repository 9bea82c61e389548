use thiserror::Error;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    /// Operand shapes are incompatible with the operation.
    #[error("{op}: dimension error: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    /// Backward was requested on something the tape cannot differentiate.
    #[error("tape error: {0}")]
    Tape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
}

impl TensorError {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
