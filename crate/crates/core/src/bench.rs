//! Per-sample latency of the early and full inference paths.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use wisense_tensor::{Element, Tensor};

use crate::error::{CoreError, Result};
use crate::model::{BranchyModel, ExitPath};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathStats {
    pub path: String,
    pub samples: usize,
    pub mean_ns: f64,
    pub median_ns: f64,
    pub p95_ns: f64,
    pub min_ns: u64,
    pub max_ns: u64,
    /// Share of measured runs that stopped at the early exit.
    pub early_fraction: f64,
}

impl PathStats {
    pub fn from_samples(path: ExitPath, times: &[u64], early: usize) -> Result<Self> {
        if times.is_empty() {
            return Err(CoreError::Param("no timing samples".into()));
        }
        let mut sorted = times.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2] as f64
        } else {
            (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
        };
        // nearest rank
        let p95 = sorted[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1] as f64;
        Ok(PathStats {
            path: format!("{path:?}").to_lowercase(),
            samples: n,
            mean_ns: sorted.iter().map(|t| *t as f64).sum::<f64>() / n as f64,
            median_ns: median,
            p95_ns: p95,
            min_ns: sorted[0],
            max_ns: sorted[n - 1],
            early_fraction: early as f64 / n as f64,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub schema_version: u32,
    pub input_shape: Vec<usize>,
    pub inputs: usize,
    pub warmup: usize,
    pub reps: usize,
    pub threads: usize,
    pub early: PathStats,
    pub full: PathStats,
    pub auto: Option<PathStats>,
    /// mean(early) / mean(full).
    pub time_ratio: f64,
    /// 1 − time_ratio.
    pub speedup_reduction: f64,
    pub mac_ratio: f64,
    pub ratio_gap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchConfig {
    pub warmup: usize,
    pub reps: usize,
    pub include_auto: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            warmup: 5,
            reps: 30,
            include_auto: true,
        }
    }
}

fn time_once<T: Element>(model: &BranchyModel<T>, x: &Tensor<T>, path: ExitPath) -> Result<(u64, bool)> {
    let t0 = Instant::now();
    let out = model.run_path(x, path)?;
    Ok((t0.elapsed().as_nanos() as u64, out.exited_early))
}

/// Times `reps` single-sample forwards along one path, cycling through
/// `inputs`, after `warmup` untimed runs.
pub fn measure<T: Element>(
    model: &BranchyModel<T>,
    inputs: &[Tensor<T>],
    path: ExitPath,
    warmup: usize,
    reps: usize,
) -> Result<PathStats> {
    if reps < 1 || inputs.is_empty() {
        return Err(CoreError::Param("need at least one rep and one input".into()));
    }
    for i in 0..warmup {
        time_once(model, &inputs[i % inputs.len()], path)?;
    }
    let mut times = Vec::with_capacity(reps);
    let mut early = 0;
    for i in 0..reps {
        let (t, e) = time_once(model, &inputs[i % inputs.len()], path)?;
        times.push(t);
        early += e as usize;
    }
    PathStats::from_samples(path, &times, early)
}

/// Early versus full latency with interleaved repetitions, plus the
/// analytic MAC ratio.
pub fn compare<T: Element>(model: &BranchyModel<T>, inputs: &[Tensor<T>], cfg: BenchConfig) -> Result<LatencyReport> {
    if cfg.reps < 1 || inputs.is_empty() {
        return Err(CoreError::Param("need at least one rep and one input".into()));
    }
    let shape = inputs[0].shape().to_vec();
    if shape.len() != 4 || shape[0] != 1 || inputs.iter().any(|x| x.shape() != shape.as_slice()) {
        return Err(CoreError::Param(format!("inputs must share a [1, 3, H, W] shape, first is {shape:?}")));
    }
    let mut paths = vec![ExitPath::Early, ExitPath::Full];
    if cfg.include_auto {
        paths.push(ExitPath::Auto);
    }
    for i in 0..cfg.warmup {
        for &p in &paths {
            time_once(model, &inputs[i % inputs.len()], p)?;
        }
    }
    let mut times = vec![Vec::with_capacity(cfg.reps); paths.len()];
    let mut early = vec![0; paths.len()];
    for i in 0..cfg.reps {
        let x = &inputs[i % inputs.len()];
        for (k, &p) in paths.iter().enumerate() {
            let (t, e) = time_once(model, x, p)?;
            times[k].push(t);
            early[k] += e as usize;
        }
    }
    let stats: Vec<PathStats> = paths
        .iter()
        .enumerate()
        .map(|(k, &p)| PathStats::from_samples(p, &times[k], early[k]))
        .collect::<Result<_>>()?;
    let time_ratio = stats[0].mean_ns / stats[1].mean_ns;
    let mac_ratio = model.mac_ratio(shape[2], shape[3]);
    Ok(LatencyReport {
        schema_version: SCHEMA_VERSION,
        input_shape: shape,
        inputs: inputs.len(),
        warmup: cfg.warmup,
        reps: cfg.reps,
        threads: wisense_tensor::parallel::threads(),
        time_ratio,
        speedup_reduction: 1.0 - time_ratio,
        mac_ratio,
        ratio_gap: (time_ratio - mac_ratio).abs(),
        auto: stats.get(2).cloned(),
        early: stats[0].clone(),
        full: stats[1].clone(),
    })
}

impl LatencyReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| CoreError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: LatencyReport = serde_json::from_str(text).map_err(|e| CoreError::Format(e.to_string()))?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(CoreError::Format(format!("latency schema {} unsupported", r.schema_version)));
        }
        Ok(r)
    }

    pub fn table(&self) -> String {
        let ms = |ns: f64| ns / 1e6;
        let mut s = format!(
            "input {:?}  inputs {}  warmup {}  reps {}  threads {}\n\n{:<6} {:>10} {:>10} {:>10} {:>7}\n",
            self.input_shape, self.inputs, self.warmup, self.reps, self.threads, "path", "mean ms", "median ms", "p95 ms", "early"
        );
        for p in [Some(&self.early), Some(&self.full), self.auto.as_ref()].into_iter().flatten() {
            s += &format!(
                "{:<6} {:>10.3} {:>10.3} {:>10.3} {:>7.2}\n",
                p.path,
                ms(p.mean_ns),
                ms(p.median_ns),
                ms(p.p95_ns),
                p.early_fraction
            );
        }
        s += &format!(
            "\ntime ratio         {:.4}\nspeedup reduction  {:.2}%\nMAC ratio          {:.4}\nratio gap          {:.4}\n",
            self.time_ratio,
            100.0 * self.speedup_reduction,
            self.mac_ratio,
            self.ratio_gap
        );
        s
    }
}
