//! Room monitor: replays or streams a CSI capture, classifies
//! sliding windows with the early-exit model, raises debounced alarms for an
//! empty room or a second occupant, and posts JSON telemetry to a webhook.

pub mod alarm;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod source;
pub mod telemetry;

pub use alarm::{alarm_decision, AlarmEvent, AlarmKind, AlarmTracker};
pub use config::{MonitorConfig, RetryPolicy, SourceConfig};
pub use error::{MonitorError, Result};
pub use pipeline::{run, run_with, shutdown_on_signals, MonitorReport};
pub use source::{window_count, Window, Windower};
pub use telemetry::{post_telemetry, Delivery, DispatchStats, HttpTransport, Outbox, TelemetryRecord, Transport};
