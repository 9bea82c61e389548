//! The three-stage monitor pipeline plus its telemetry dispatcher.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Sender};
use serde::{Deserialize, Serialize};
use wisense_core::{load_weights, BranchyModel};
use wisense_csi::{ParseStats, Preprocessor, RadioImage, SubcarrierMask};

use crate::alarm::{AlarmEvent, AlarmTracker};
use crate::config::{MonitorConfig, SourceConfig};
use crate::error::{MonitorError, Result};
use crate::source::{open_stream, stream_frames, Pacer, Window, Windower};
use crate::telemetry::{dispatch, DispatchStats, HttpTransport, Mailbox, TelemetryRecord, Transport};

/// What a run did, for logs and tests.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub frames: u64,
    pub windows: u64,
    /// Windows whose preprocessing or inference failed.
    pub failed_windows: u64,
    pub early_exits: u64,
    pub alarms: Vec<AlarmEvent>,
    pub telemetry: DispatchStats,
    pub parse: ParseStats,
    pub reconnects: u32,
    /// Stopped by a shutdown request rather than source exhaustion.
    pub interrupted: bool,
}

impl MonitorReport {
    /// Windows accounted for: delivered, dropped, dead-lettered or failed.
    pub fn accounted(&self) -> u64 {
        self.telemetry.delivered + self.telemetry.dropped + self.telemetry.dead_letter + self.failed_windows
    }
}

/// Raises the returned flag on SIGINT or SIGTERM.
pub fn shutdown_on_signals() -> Result<Arc<AtomicBool>> {
    let flag = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGINT, signal_hook::consts::SIGTERM] {
        signal_hook::flag::register(sig, Arc::clone(&flag)).map_err(|e| MonitorError::Stage {
            stage: "signals",
            detail: e.to_string(),
        })?;
    }
    Ok(flag)
}

/// Loads the model named in `cfg` and runs until the source ends or
/// `stop` is raised.
pub fn run(cfg: &MonitorConfig, stop: &AtomicBool) -> Result<MonitorReport> {
    cfg.validate()?;
    let model = load_weights::<f32>(&cfg.model)?;
    log::info!("model {} loaded, topology {:016x}", cfg.model.display(), model.topology_hash());
    let transport = HttpTransport::new(
        &cfg.endpoint,
        cfg.auth_token.clone(),
        Duration::from_millis(cfg.retry.timeout_ms),
    );
    run_with(cfg, &model, transport, stop)
}

struct Ingest {
    frames: u64,
    parse: ParseStats,
    reconnects: u32,
}

fn add_stats(a: &mut ParseStats, b: ParseStats) {
    a.packets += b.packets;
    a.frames += b.frames;
    a.non_csi += b.non_csi;
    a.truncated += b.truncated;
    a.bad_magic += b.bad_magic;
}

fn ingest(cfg: &MonitorConfig, stop: &AtomicBool, tx: Sender<Window>) -> Result<Ingest> {
    let mut windower = Windower::new(cfg.window, cfg.hop);
    let mut out = Ingest {
        frames: 0,
        parse: ParseStats::default(),
        reconnects: 0,
    };
    let mut forward = |f, frames: &mut u64| -> Result<bool> {
        *frames += 1;
        match windower.push(f)? {
            Some(w) => Ok(tx.send(w).is_ok()),
            None => Ok(true),
        }
    };
    match &cfg.source {
        SourceConfig::PcapFile { path, replay_rate } => {
            let mut pacer = Pacer::new(*replay_rate);
            let stats = stream_frames(open_stream(path)?, stop, |f| {
                pacer.wait(f.timestamp_us, stop);
                forward(f, &mut out.frames)
            })?;
            add_stats(&mut out.parse, stats);
        }
        SourceConfig::Pipe { path } => {
            // the retry budget covers the whole run, successful or not
            let mut failures = 0;
            let mut reader = Some(open_stream(path)?);
            while let Some(r) = reader.take() {
                let stats = stream_frames(r, stop, |f| forward(f, &mut out.frames))?;
                add_stats(&mut out.parse, stats);
                if stop.load(Ordering::Relaxed) || path.as_os_str() == "-" {
                    break;
                }
                while out.reconnects + failures < cfg.retry.max_retries {
                    let retry = out.reconnects + failures;
                    thread::sleep(cfg.retry.backoff(retry));
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    match open_stream(path) {
                        Ok(r) => {
                            log::info!("reconnected to {}", path.display());
                            out.reconnects += 1;
                            reader = Some(r);
                            break;
                        }
                        Err(e) => {
                            log::warn!("reconnect {} failed: {e}", retry + 1);
                            failures += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

struct Prepared {
    window: Window,
    image: RadioImage,
    prep_ns: u64,
}

fn preprocess(pre: &Preprocessor, rx: Receiver<Window>, tx: Sender<Result<Prepared, (Window, String)>>) {
    for window in rx {
        let t0 = Instant::now();
        let msg = match pre.process(&window.matrix, None, None) {
            Ok(image) => Ok(Prepared {
                window,
                image,
                prep_ns: t0.elapsed().as_nanos() as u64,
            }),
            Err(e) => Err((window, e.to_string())),
        };
        if tx.send(msg).is_err() {
            break;
        }
    }
}

struct Inference {
    windows: u64,
    failed: u64,
    early_exits: u64,
    alarms: Vec<AlarmEvent>,
}

fn infer(
    model: &BranchyModel<f32>,
    debounce: usize,
    rx: Receiver<Result<Prepared, (Window, String)>>,
    mailbox: &Mailbox,
) -> Inference {
    let mut tracker = AlarmTracker::new(debounce);
    let mut out = Inference {
        windows: 0,
        failed: 0,
        early_exits: 0,
        alarms: Vec::new(),
    };
    for msg in rx {
        out.windows += 1;
        let p = match msg {
            Ok(p) => p,
            Err((w, e)) => {
                log::error!("window {} preprocessing failed: {e}", w.id);
                out.failed += 1;
                continue;
            }
        };
        let t0 = Instant::now();
        let outcome = match model.forward_with_exit(&p.image) {
            Ok(o) => o,
            Err(e) => {
                log::error!("window {} inference failed: {e}", p.window.id);
                out.failed += 1;
                continue;
            }
        };
        let latency = p.prep_ns + t0.elapsed().as_nanos() as u64;
        out.early_exits += outcome.exited_early as u64;
        let alarm = tracker.observe(outcome.rod_label);
        if let Some(kind) = alarm {
            log::warn!("alarm {kind:?} at window {}", p.window.id);
            out.alarms.push(AlarmEvent {
                kind,
                timestamp_us: p.window.ts,
                window_id: p.window.id,
                rod_probs: outcome.rod_probs.clone(),
            });
        }
        mailbox.send(TelemetryRecord::new(p.window.ts, p.window.id, &outcome, latency, alarm));
    }
    out
}

fn stage_panic(stage: &'static str) -> MonitorError {
    MonitorError::Stage {
        stage,
        detail: "thread panicked".into(),
    }
}

/// Runs the pipeline with an already loaded model and a chosen transport.
pub fn run_with(
    cfg: &MonitorConfig,
    model: &BranchyModel<f32>,
    mut transport: impl Transport,
    stop: &AtomicBool,
) -> Result<MonitorReport> {
    cfg.validate()?;
    let pre = Preprocessor::new(SubcarrierMask::vht80(), cfg.smoothing)?;
    let mailbox = Mailbox::new(cfg.buffer_capacity);
    let (win_tx, win_rx) = bounded(cfg.queue_depth);
    let (img_tx, img_rx) = bounded(cfg.queue_depth);

    thread::scope(|s| {
        let ingest_h = s.spawn(|| ingest(cfg, stop, win_tx));
        let pre_h = s.spawn(|| preprocess(&pre, win_rx, img_tx));
        let dispatch_h = s.spawn(|| dispatch(&mailbox, &mut transport, &cfg.retry));
        let inference = infer(model, cfg.debounce, img_rx, &mailbox);
        mailbox.close();

        let ingest = ingest_h.join().map_err(|_| stage_panic("ingest"))?;
        pre_h.join().map_err(|_| stage_panic("preprocess"))?;
        let telemetry = dispatch_h.join().map_err(|_| stage_panic("dispatch"))?;
        let ingest = ingest?;
        let report = MonitorReport {
            frames: ingest.frames,
            windows: inference.windows,
            failed_windows: inference.failed,
            early_exits: inference.early_exits,
            alarms: inference.alarms,
            telemetry,
            parse: ingest.parse,
            reconnects: ingest.reconnects,
            interrupted: stop.load(Ordering::Relaxed),
        };
        log::info!(
            "{} frames, {} windows, {} delivered, {} dropped, {} dead-lettered, {} alarms",
            report.frames,
            report.windows,
            telemetry.delivered,
            telemetry.dropped,
            telemetry.dead_letter,
            report.alarms.len()
        );
        Ok(report)
    })
}
