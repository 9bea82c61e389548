//! Kernel thread cap.
//!
//! Kernels only fan out over batch items, and every output element keeps a
//! fixed reduction order, so results are bit-identical for any thread count.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

/// Environment variable read by [`init_from_env`].
pub const THREADS_ENV: &str = "WISENSE_THREADS";

static THREADS: AtomicUsize = AtomicUsize::new(1);

pub fn set_threads(n: usize) {
    THREADS.store(n.max(1), Ordering::Relaxed);
}

pub fn threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

/// Applies `WISENSE_THREADS` when set; returns the effective cap.
pub fn init_from_env() -> usize {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        set_threads(n);
    }
    threads()
}

/// Runs `f(index, chunk)` over consecutive `chunk`-sized pieces of `out`.
pub(crate) fn for_each_chunk<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk == 0 {
        return;
    }
    if threads() > 1 && out.len() > chunk {
        out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}
