//! Two-exit Ghost network for joint occupancy detection and activity
//! recognition from WiFi radio images: model, weight files, training,
//! metrics and latency measurement.

pub mod augment;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod params;
pub mod train;

pub use augment::{augment, AugmentConfig};
pub use bench::{compare, measure, BenchConfig, LatencyReport, PathStats};
pub use checkpoint::{load_weights, load_weights_into, save_weights};
pub use config::{BlockCfg, ModelConfig, HAR_CLASSES, ROD_CLASSES};
pub use error::{CoreError, Result};
pub use metrics::{evaluate, MetricsReport, Task};
pub use model::{images_to_tensor, probabilities, BranchyModel, ExitPath, InferenceOutcome, StageTimings};
pub use params::{ParamStore, Segment};
pub use train::{cosine_lr, joint_loss, train, AdamW, EpochReport, LossReport, TrainConfig};
