//! Frame sources and sliding windows.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use wisense_csi::{parse_pcap_reader, CsiFrame, CsiMatrix, ParseStats};

use crate::error::{io, Result};

/// A complete window of packets, numbered from 0 in arrival order.
#[derive(Clone, Debug)]
pub struct Window {
    pub id: u64,
    /// Timestamp of the newest packet, microseconds.
    pub ts: u64,
    pub matrix: CsiMatrix,
}

/// Cuts a frame stream into windows of `window` packets advancing by `hop`.
#[derive(Debug)]
pub struct Windower {
    window: usize,
    hop: usize,
    buf: VecDeque<CsiFrame>,
    skip: usize,
    next_id: u64,
}

impl Windower {
    pub fn new(window: usize, hop: usize) -> Self {
        Windower {
            window: window.max(1),
            hop: hop.max(1),
            buf: VecDeque::with_capacity(window),
            skip: 0,
            next_id: 0,
        }
    }

    pub fn push(&mut self, frame: CsiFrame) -> Result<Option<Window>> {
        if self.skip > 0 {
            self.skip -= 1;
            return Ok(None);
        }
        self.buf.push_back(frame);
        if self.buf.len() < self.window {
            return Ok(None);
        }
        let frames: Vec<CsiFrame> = self.buf.iter().cloned().collect();
        let ts = frames.last().map_or(0, |f| f.timestamp_us);
        let matrix = CsiMatrix::from_frames(&frames)?;
        let drained = self.hop.min(self.buf.len());
        self.buf.drain(..drained);
        self.skip = self.hop - drained;
        let id = self.next_id;
        self.next_id += 1;
        Ok(Some(Window { id, ts, matrix }))
    }

    /// Forgets buffered frames, e.g. after the source reconnects. Window
    /// numbering continues.
    pub fn reset(&mut self) {
        self.buf.clear();
        self.skip = 0;
    }

    pub fn emitted(&self) -> u64 {
        self.next_id
    }
}

/// Windows a stream of `frames` packets yields.
pub fn window_count(frames: usize, window: usize, hop: usize) -> usize {
    if frames < window {
        0
    } else {
        1 + (frames - window) / hop
    }
}

pub(crate) fn open_stream(path: &Path) -> Result<Box<dyn Read + Send>> {
    if path == Path::new("-") {
        return Ok(Box::new(io::stdin()));
    }
    let f = File::open(path).map_err(|e| io(path, e))?;
    Ok(Box::new(BufReader::new(f)))
}

/// Paces frames to their capture timestamps divided by `rate`.
pub(crate) struct Pacer {
    rate: f64,
    origin: Option<(u64, Instant)>,
}

impl Pacer {
    pub fn new(rate: f64) -> Self {
        Pacer { rate, origin: None }
    }

    /// Sleeps until `ts` is due; returns early if `stop` is raised.
    pub fn wait(&mut self, ts: u64, stop: &AtomicBool) {
        if self.rate <= 0.0 {
            return;
        }
        let (t0, start) = *self.origin.get_or_insert((ts, Instant::now()));
        let due = start + Duration::from_secs_f64(ts.saturating_sub(t0) as f64 / 1e6 / self.rate);
        while !stop.load(Ordering::Relaxed) {
            let now = Instant::now();
            if now >= due {
                break;
            }
            thread::sleep((due - now).min(Duration::from_millis(50)));
        }
    }
}

/// Frames of one pcap stream; parse failures of individual packets are
/// counted in the returned stats.
pub(crate) fn stream_frames(
    reader: Box<dyn Read + Send>,
    stop: &AtomicBool,
    mut each: impl FnMut(CsiFrame) -> Result<bool>,
) -> Result<ParseStats> {
    let mut frames = parse_pcap_reader(reader, None)?;
    while !stop.load(Ordering::Relaxed) {
        match frames.next() {
            Some(Ok(f)) => {
                if !each(f)? {
                    break;
                }
            }
            Some(Err(e)) => {
                log::warn!("capture stream ended: {e}");
                break;
            }
            None => break,
        }
    }
    Ok(frames.stats())
}
