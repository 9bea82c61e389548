use std::path::PathBuf;

use wisense_csi::CsiError;
use wisense_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Csi(#[from] CsiError),
    #[error("build error: {detail} (network has {convs} conv and {fcs} fully connected layers)")]
    Build { detail: String, convs: usize, fcs: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint is missing tensors: {}", missing.join(", "))]
    IncompleteCheckpoint { missing: Vec<String> },
    #[error("topology hash mismatch: checkpoint {found:016x}, model {expected:016x}")]
    TopologyMismatch { expected: u64, found: u64 },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr {lr:e})")]
    Diverged { epoch: usize, batch: usize, lr: f64 },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}
