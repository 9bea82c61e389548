//! Telemetry records, the bounded outbox and webhook delivery.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wisense_core::InferenceOutcome;
use wisense_csi::Activity;

use crate::alarm::AlarmKind;
use crate::config::RetryPolicy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlarmRef {
    pub kind: AlarmKind,
    pub window_id: u64,
}

/// One window's result as posted to the endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    /// Capture timestamp of the window's last packet, microseconds.
    pub ts: u64,
    pub window_id: u64,
    pub rod_label: usize,
    pub rod_probs: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub har_label: Option<Activity>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub har_probs: Option<Vec<f64>>,
    pub exited_early: bool,
    /// Preprocessing plus inference.
    pub latency_ns: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alarm: Option<AlarmRef>,
}

impl TelemetryRecord {
    pub fn new(ts: u64, window_id: u64, out: &InferenceOutcome, latency_ns: u64, alarm: Option<AlarmKind>) -> Self {
        TelemetryRecord {
            ts,
            window_id,
            rod_label: out.rod_label.index(),
            rod_probs: out.rod_probs.clone(),
            har_label: out.har_label,
            har_probs: out.har_probs.clone(),
            exited_early: out.exited_early,
            latency_ns,
            alarm: alarm.map(|kind| AlarmRef { kind, window_id }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Delivery {
    Delivered { attempts: u32 },
    /// Every attempt failed; `last` describes the final failure.
    Exhausted { attempts: u32, last: String },
}

/// Something that can carry one record.
pub trait Transport: Send {
    /// `Ok(status)` when a response arrived, `Err` for transport failures.
    fn post(&mut self, record: &TelemetryRecord) -> Result<u16, String>;
}

/// JSON over HTTP POST with an optional bearer token.
pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    auth: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: &str, auth: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport {
            agent,
            endpoint: endpoint.to_string(),
            auth,
        }
    }
}

impl Transport for HttpTransport {
    fn post(&mut self, record: &TelemetryRecord) -> Result<u16, String> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(token) = &self.auth {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        req.send_json(record).map(|r| r.status().as_u16()).map_err(|e| e.to_string())
    }
}

/// POSTs `record`, retrying non-2xx answers and transport errors with
/// exponential backoff. `pause` performs the waits.
pub fn post_telemetry(
    transport: &mut dyn Transport,
    record: &TelemetryRecord,
    policy: &RetryPolicy,
    mut pause: impl FnMut(Duration),
) -> Delivery {
    let mut last = String::new();
    for attempt in 0..=policy.max_retries {
        if attempt > 0 {
            pause(policy.backoff(attempt - 1));
        }
        match transport.post(record) {
            Ok(s) if (200..300).contains(&s) => return Delivery::Delivered { attempts: attempt + 1 },
            Ok(s) => last = format!("HTTP {s}"),
            Err(e) => last = e,
        }
        log::debug!("window {} attempt {} failed: {last}", record.window_id, attempt + 1);
    }
    Delivery::Exhausted {
        attempts: policy.max_retries + 1,
        last,
    }
}

/// Counters of the dispatch stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchStats {
    pub delivered: u64,
    /// Evicted from a full outbox.
    pub dropped: u64,
    /// Gave up after the retry budget.
    pub dead_letter: u64,
    pub retries: u64,
}

/// Fixed-capacity FIFO that evicts its oldest entry when full.
#[derive(Debug)]
pub struct Outbox<T> {
    items: VecDeque<T>,
    capacity: usize,
    dropped: u64,
}

impl<T> Outbox<T> {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Outbox {
            items: VecDeque::with_capacity(capacity),
            capacity,
            dropped: 0,
        }
    }

    /// Queues `item`, returning the evicted oldest entry if the box was full.
    pub fn push(&mut self, item: T) -> Option<T> {
        let evicted = (self.items.len() == self.capacity).then(|| self.items.pop_front()).flatten();
        if evicted.is_some() {
            self.dropped += 1;
        }
        self.items.push_back(item);
        evicted
    }

    pub fn pop(&mut self) -> Option<T> {
        self.items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

struct Shared {
    outbox: Outbox<TelemetryRecord>,
    closed: bool,
}

/// Outbox shared between the inference stage and the dispatcher thread.
/// Producers never block.
pub struct Mailbox {
    state: Mutex<Shared>,
    ready: Condvar,
}

impl Mailbox {
    pub fn new(capacity: usize) -> Self {
        Mailbox {
            state: Mutex::new(Shared {
                outbox: Outbox::new(capacity),
                closed: false,
            }),
            ready: Condvar::new(),
        }
    }

    pub fn send(&self, record: TelemetryRecord) {
        let mut s = self.state.lock().expect("mailbox lock");
        if let Some(old) = s.outbox.push(record) {
            log::warn!("telemetry outbox full, dropping window {}", old.window_id);
        }
        self.ready.notify_one();
    }

    /// No more records will arrive; the dispatcher drains and stops.
    pub fn close(&self) {
        self.state.lock().expect("mailbox lock").closed = true;
        self.ready.notify_all();
    }

    /// Next record, waiting while the box is open and empty.
    fn recv(&self) -> Option<TelemetryRecord> {
        let mut s = self.state.lock().expect("mailbox lock");
        loop {
            if let Some(r) = s.outbox.pop() {
                return Some(r);
            }
            if s.closed {
                return None;
            }
            s = self.ready.wait(s).expect("mailbox lock");
        }
    }

    pub fn dropped(&self) -> u64 {
        self.state.lock().expect("mailbox lock").outbox.dropped()
    }

    pub fn pending(&self) -> usize {
        self.state.lock().expect("mailbox lock").outbox.len()
    }
}

/// Dispatcher loop: delivers records until the mailbox is closed and empty.
pub fn dispatch(mailbox: &Mailbox, transport: &mut dyn Transport, policy: &RetryPolicy) -> DispatchStats {
    let mut stats = DispatchStats::default();
    while let Some(record) = mailbox.recv() {
        match post_telemetry(transport, &record, policy, thread::sleep) {
            Delivery::Delivered { attempts } => {
                stats.delivered += 1;
                stats.retries += u64::from(attempts - 1);
            }
            Delivery::Exhausted { attempts, last } => {
                log::warn!("window {} undeliverable after {attempts} attempts: {last}", record.window_id);
                stats.dead_letter += 1;
                stats.retries += u64::from(attempts - 1);
            }
        }
    }
    stats.dropped = mailbox.dropped();
    stats
}
