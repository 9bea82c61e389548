//! Daemon configuration, read from JSON.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wisense_csi::WINDOW;

use crate::error::{io, MonitorError, Result};

pub const DEFAULT_HOP: usize = 100;
pub const DEFAULT_DEBOUNCE: usize = 3;

/// Where frames come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceConfig {
    /// Recorded capture. `replay_rate` scales the original inter-packet
    /// gaps; 2.0 plays twice as fast, 0 disables pacing.
    PcapFile {
        path: PathBuf,
        #[serde(default)]
        replay_rate: f64,
    },
    /// A pcap byte stream such as a FIFO fed by a capture tool; `-` reads
    /// standard input. When the stream ends it is reopened, at most
    /// `retry.max_retries` times per run.
    Pipe { path: PathBuf },
}

/// Attempts and exponential backoff shared by telemetry delivery and pipe
/// reconnection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    /// Per-request timeout.
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_backoff_ms: 200,
            max_backoff_ms: 5_000,
            timeout_ms: 2_000,
        }
    }
}

impl RetryPolicy {
    /// Wait before retry number `retry` (0-based): doubles each time, capped.
    pub fn backoff(&self, retry: u32) -> Duration {
        let ms = self.initial_backoff_ms.saturating_mul(1u64 << retry.min(32));
        Duration::from_millis(ms.min(self.max_backoff_ms))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub source: SourceConfig,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_hop")]
    pub hop: usize,
    pub model: PathBuf,
    #[serde(default = "default_debounce")]
    pub debounce: usize,
    pub endpoint: String,
    #[serde(default)]
    pub auth_token: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Telemetry records held while the endpoint is unavailable.
    #[serde(default = "default_buffer")]
    pub buffer_capacity: usize,
    /// Depth of the queues between pipeline stages.
    #[serde(default = "default_queue")]
    pub queue_depth: usize,
    #[serde(default = "default_smoothing")]
    pub smoothing: usize,
}

fn default_window() -> usize {
    WINDOW
}
fn default_hop() -> usize {
    DEFAULT_HOP
}
fn default_debounce() -> usize {
    DEFAULT_DEBOUNCE
}
fn default_buffer() -> usize {
    100
}
fn default_queue() -> usize {
    4
}
fn default_smoothing() -> usize {
    wisense_csi::DEFAULT_SMOOTHING
}

impl MonitorConfig {
    pub fn new(source: SourceConfig, model: PathBuf, endpoint: impl Into<String>) -> Self {
        MonitorConfig {
            source,
            window: WINDOW,
            hop: DEFAULT_HOP,
            model,
            debounce: DEFAULT_DEBOUNCE,
            endpoint: endpoint.into(),
            auth_token: None,
            retry: RetryPolicy::default(),
            buffer_capacity: default_buffer(),
            queue_depth: default_queue(),
            smoothing: default_smoothing(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: MonitorConfig = serde_json::from_str(text).map_err(|e| MonitorError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MonitorError::Config(m));
        if self.window != WINDOW {
            return bad(format!("window must be {WINDOW} packets, got {}", self.window));
        }
        if self.hop < 1 {
            return bad("hop must be at least 1 packet".into());
        }
        if self.debounce < 1 {
            return bad("debounce must be at least 1 window".into());
        }
        if self.buffer_capacity < 1 || self.queue_depth < 1 {
            return bad("buffer_capacity and queue_depth must be at least 1".into());
        }
        if self.smoothing < 1 {
            return bad("smoothing must be at least 1".into());
        }
        if let SourceConfig::PcapFile { replay_rate, .. } = &self.source {
            if !(*replay_rate >= 0.0) || !replay_rate.is_finite() {
                return bad(format!("replay_rate must be finite and >= 0, got {replay_rate}"));
            }
        }
        if self.retry.initial_backoff_ms > self.retry.max_backoff_ms {
            return bad("retry.initial_backoff_ms exceeds retry.max_backoff_ms".into());
        }
        check_endpoint(&self.endpoint)
    }
}

/// Accepts `http://host[:port][/path]`.
pub fn check_endpoint(url: &str) -> Result<()> {
    let rest = url
        .strip_prefix("http://")
        .ok_or_else(|| MonitorError::Config(format!("endpoint {url:?} must start with http://")))?;
    let authority = rest.split('/').next().unwrap_or("");
    let (host, port) = match authority.rsplit_once(':') {
        Some((h, p)) => (h, Some(p)),
        None => (authority, None),
    };
    if host.is_empty() || host.contains(|c: char| c.is_whitespace() || c == '@') {
        return Err(MonitorError::Config(format!("endpoint {url:?} has no usable host")));
    }
    if let Some(p) = port {
        if p.parse::<u16>().is_err() {
            return Err(MonitorError::Config(format!("endpoint {url:?} has a bad port")));
        }
    }
    Ok(())
}
