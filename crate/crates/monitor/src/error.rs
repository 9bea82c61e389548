use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("invalid monitor config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csi(#[from] wisense_csi::CsiError),
    #[error(transparent)]
    Model(#[from] wisense_core::CoreError),
    #[error("pipeline stage {stage} failed: {detail}")]
    Stage { stage: &'static str, detail: String },
}

pub type Result<T, E = MonitorError> = std::result::Result<T, E>;

pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> MonitorError {
    MonitorError::Io {
        path: path.into(),
        source,
    }
}
