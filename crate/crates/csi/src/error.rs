use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CsiError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("shape mismatch in {stage}: expected {expected}, got {got}")]
    Shape {
        stage: &'static str,
        expected: String,
        got: String,
    },
}

pub type Result<T> = std::result::Result<T, CsiError>;

impl CsiError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CsiError::Io {
            path: path.into(),
            source,
        }
    }
}
