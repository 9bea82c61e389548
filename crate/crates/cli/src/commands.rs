use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use wisense_core::{
    compare, evaluate, load_weights, measure, save_weights, train, AugmentConfig, BenchConfig, BranchyModel, ExitPath,
    MetricsReport, ModelConfig, Task, TrainConfig,
};
use wisense_csi::{
    assemble_matrix, dataset_read, dataset_write, filter_subcarriers, moving_average, parse_pcap, synth_dataset,
    to_radio_image, Activity, Occupancy, Preprocessor, RadioImage, Sample, SubcarrierMask,
};
use wisense_tensor::Tensor;

use crate::args::{BenchArgs, Cli, Command, EvalArgs, Format, IngestArgs, PathArg, Preset, SynthArgs, TaskArg, TrainArgs};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// What a handler produces: a JSON document and its human rendering.
struct Output {
    json: Value,
    text: String,
}

/// Runs the parsed command and writes its result to `out`.
pub fn execute(cli: &Cli, out: &mut impl Write) -> Result<()> {
    let o = match &cli.command {
        Command::Ingest(a) => ingest(a)?,
        Command::Synth(a) => synth(cli.seed, a)?,
        Command::Train(a) => train_cmd(cli, a)?,
        Command::Eval(a) => eval(a)?,
        Command::Bench(a) => bench(cli.seed, a)?,
        Command::Monitor => monitor(cli)?,
    };
    let rendered = match cli.format {
        Format::Json => serde_json::to_string_pretty(&o.json).map_err(|e| CliError::io("output", e))?,
        Format::Text => o.text.trim_end().to_string(),
    };
    writeln!(out, "{rendered}").map_err(|e| CliError::io("output", e))
}

fn to_json(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn label<L: Copy>(flag: &str, value: Option<&str>, names: &[&str], all: &[L]) -> Result<Option<L>> {
    value
        .map(|v| {
            names
                .iter()
                .position(|n| *n == v)
                .map(|i| all[i])
                .ok_or_else(|| CliError::Usage(format!("--{flag} {v:?} is not one of {}", names.join(", "))))
        })
        .transpose()
}

#[derive(Deserialize)]
struct MaskFile {
    nulls: Vec<usize>,
    pilots: Vec<usize>,
}

#[derive(Serialize)]
struct StageCount {
    stage: &'static str,
    input: usize,
    output: usize,
    detail: String,
}

fn ingest(a: &IngestArgs) -> Result<Output> {
    let rod = label("rod", a.rod.as_deref(), &Occupancy::NAMES, &Occupancy::ALL)?;
    let har = label("har", a.har.as_deref(), &Activity::NAMES, &Activity::ALL)?;
    if har.is_some() && rod != Some(Occupancy::OnePerson) {
        return Err(CliError::Usage("--har applies only with --rod one_person".into()));
    }
    let mask = match &a.mask {
        None => SubcarrierMask::vht80(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io("mask", format!("{}: {e}", p.display())))?;
            let m: MaskFile = serde_json::from_str(&text).map_err(|e| CliError::Stage {
                stage: "mask",
                code: crate::exit::DATA,
                message: format!("{}: {e}", p.display()),
            })?;
            SubcarrierMask::new(&m.nulls, &m.pilots).map_err(|e| CliError::csi("mask", e))?
        }
    };
    let removed = mask.nulls().len() + mask.pilots().len();

    let (frames, stats) = parse_pcap(&a.pcap, a.port)
        .and_then(|p| p.collect_frames())
        .map_err(|e| CliError::csi("parse_pcap", e))?;
    let n_frames = frames.len();
    let mut asm = assemble_matrix(frames, a.window).map_err(|e| CliError::csi("assemble_matrix", e))?;
    let matrices = asm.by_ref().collect::<wisense_csi::Result<Vec<_>>>().map_err(|e| CliError::csi("assemble_matrix", e))?;
    let dropped = asm.dropped();

    let mut rows = (0, 0);
    let mut samples = Vec::with_capacity(matrices.len());
    for (i, m) in matrices.iter().enumerate() {
        let kept = filter_subcarriers(m, &mask).map_err(|e| CliError::csi("filter_subcarriers", e))?;
        rows = (m.matrix().rows(), kept.rows());
        let smooth = moving_average(&kept, a.smoothing).map_err(|e| CliError::csi("moving_average", e))?;
        let image = to_radio_image(smooth, rod, har).map_err(|e| CliError::csi("normalize", e))?;
        let name = a.pcap.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        samples.push(Sample {
            image,
            seed: None,
            source: format!("pcap:{name}#{i}"),
        });
    }
    dataset_write(&samples, &a.out).map_err(|e| CliError::csi("write", e))?;

    let windows = samples.len();
    let stages = [
        StageCount {
            stage: "parse_pcap",
            input: stats.packets as usize,
            output: n_frames,
            detail: format!(
                "{} non-CSI, {} truncated, {} bad magic",
                stats.non_csi, stats.truncated, stats.bad_magic
            ),
        },
        StageCount {
            stage: "assemble_matrix",
            input: n_frames,
            output: windows,
            detail: format!("{dropped} frames in a partial window dropped"),
        },
        StageCount {
            stage: "filter_subcarriers",
            input: windows,
            output: windows,
            detail: format!("{} -> {} rows, {removed} removed", rows.0, rows.1),
        },
        StageCount {
            stage: "moving_average",
            input: windows,
            output: windows,
            detail: format!("width {}", a.smoothing),
        },
        StageCount {
            stage: "normalize",
            input: windows,
            output: windows,
            detail: "min-max to [0, 1], three channels".into(),
        },
        StageCount {
            stage: "write",
            input: windows,
            output: windows,
            detail: a.out.display().to_string(),
        },
    ];
    let text = stages
        .iter()
        .map(|s| format!("{:<18} {:>6} -> {:<6} {}", s.stage, s.input, s.output, s.detail))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(Output {
        json: json!({
            "samples": windows,
            "rows_removed": removed,
            "parse": to_json(&stats),
            "dropped_frames": dropped,
            "stages": to_json(&stages),
        }),
        text,
    })
}

fn synth(seed: u64, a: &SynthArgs) -> Result<Output> {
    if a.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let samples = synth_dataset(a.count, seed, &Preprocessor::default()).map_err(|e| CliError::csi("synth", e))?;
    dataset_write(&samples, &a.out).map_err(|e| CliError::csi("write", e))?;
    let mut per = std::collections::BTreeMap::<String, usize>::new();
    for s in &samples {
        *per.entry(s.source.trim_start_matches("synth:").to_string()).or_default() += 1;
    }
    let text = format!(
        "{} samples (seed {seed}) written to {}\n{}",
        samples.len(),
        a.out.display(),
        per.iter().map(|(k, v)| format!("  {k:<22} {v}")).collect::<Vec<_>>().join("\n")
    );
    Ok(Output {
        json: json!({ "samples": samples.len(), "seed": seed, "out": a.out, "scenarios": per }),
        text,
    })
}

fn read_images(path: &Path) -> Result<Vec<RadioImage>> {
    Ok(dataset_read(path)
        .map_err(|e| CliError::csi("dataset_read", e))?
        .into_iter()
        .map(|s| s.image)
        .collect())
}

/// Splits off an evenly spaced `share` of the samples.
pub fn holdout_split<T: Clone>(items: &[T], share: f64) -> (Vec<T>, Vec<T>) {
    let (mut keep, mut held) = (Vec::new(), Vec::new());
    for (i, x) in items.iter().enumerate() {
        if ((i + 1) as f64 * share).floor() > (i as f64 * share).floor() {
            held.push(x.clone());
        } else {
            keep.push(x.clone());
        }
    }
    (keep, held)
}

fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    let Some(p) = path else {
        return Ok(TrainConfig::default());
    };
    let text = fs::read_to_string(p).map_err(|e| CliError::io("config", format!("{}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
}

fn metrics_text(name: &str, r: &MetricsReport) -> String {
    format!("{name} accuracy {:.4} over {} samples\n{}", r.accuracy, r.samples, r.table())
}

fn score(model: &BranchyModel<f32>, data: &[RadioImage], task: TaskArg, batch: usize) -> Result<Vec<(Task, MetricsReport)>> {
    let tasks = match task {
        TaskArg::Rod => vec![Task::Rod],
        TaskArg::Har => vec![Task::Har],
        TaskArg::Both => vec![Task::Rod, Task::Har],
    };
    tasks
        .into_iter()
        .map(|t| evaluate(model, data, t, batch).map(|r| (t, r)).map_err(|e| CliError::core("evaluate", e)))
        .collect()
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<Output> {
    if !(0.0..1.0).contains(&a.holdout) {
        return Err(CliError::Usage("--holdout must lie in [0, 1)".into()));
    }
    let mut cfg = load_train_config(cli.config.as_deref())?;
    cfg.seed = cli.seed;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.base_lr = lr;
        cfg.min_lr = cfg.min_lr.min(lr);
    }
    if a.no_augment {
        cfg.augment = AugmentConfig::off();
    }
    cfg.validate().map_err(|e| CliError::core("train", e))?;

    let data = read_images(&a.data)?;
    let (fit, held) = holdout_split(&data, a.holdout);
    let arch = match a.preset {
        Preset::Full => ModelConfig::default(),
        Preset::Desk => ModelConfig::desk(),
    }
    .with_seed(cli.seed);
    let mut model = BranchyModel::<f32>::build(arch).map_err(|e| CliError::core("build", e))?;
    let history = train(&mut model, &fit, &cfg, |r| {
        log::info!(
            "epoch {:>3} lr {:.2e} loss {:.4} rod acc {:.3} har acc {}",
            r.epoch,
            r.lr,
            r.loss.total,
            r.rod_accuracy,
            r.har_accuracy.map_or("-".into(), |h| format!("{h:.3}"))
        )
    })
    .map_err(|e| CliError::core("train", e))?;
    save_weights(&model, &a.out).map_err(|e| CliError::core("save_weights", e))?;

    let scored = if held.is_empty() {
        Vec::new()
    } else {
        score(&model, &held, TaskArg::Both, cfg.test_batch)?
    };
    let last = history.last().expect("at least one epoch");
    let mut text = format!(
        "trained {} epochs on {} samples, final loss {:.4}, checkpoint {}\n",
        history.len(),
        fit.len(),
        last.loss.total,
        a.out.display()
    );
    for (t, r) in &scored {
        text += &format!("\nheld-out {}", metrics_text(&format!("{t:?}").to_lowercase(), r));
    }
    let holdout: serde_json::Map<String, Value> = scored
        .iter()
        .map(|(t, r)| (format!("{t:?}").to_lowercase(), to_json(r)))
        .collect();
    Ok(Output {
        json: json!({
            "checkpoint": a.out,
            "train_samples": fit.len(),
            "holdout_samples": held.len(),
            "config": to_json(&cfg),
            "history": to_json(&history),
            "holdout": holdout,
        }),
        text,
    })
}

fn eval(a: &EvalArgs) -> Result<Output> {
    if a.batch == 0 {
        return Err(CliError::Usage("--batch must be at least 1".into()));
    }
    let model = load_weights::<f32>(&a.model).map_err(|e| CliError::core("load_weights", e))?;
    let data = read_images(&a.data)?;
    let scored = score(&model, &data, a.task, a.batch)?;
    let text = scored
        .iter()
        .map(|(t, r)| metrics_text(&format!("{t:?}").to_lowercase(), r))
        .collect::<Vec<_>>()
        .join("\n");
    let json: serde_json::Map<String, Value> = scored
        .iter()
        .map(|(t, r)| (format!("{t:?}").to_lowercase(), to_json(r)))
        .collect();
    Ok(Output {
        json: Value::Object(json),
        text,
    })
}

fn bench(seed: u64, a: &BenchArgs) -> Result<Output> {
    if a.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    if a.inputs == 0 {
        return Err(CliError::Usage("--inputs must be at least 1".into()));
    }
    let model = match &a.model {
        Some(p) => load_weights::<f32>(p).map_err(|e| CliError::core("load_weights", e))?,
        None => BranchyModel::build(ModelConfig::default().with_seed(seed)).map_err(|e| CliError::core("build", e))?,
    };
    let inputs: Vec<Tensor<f32>> = synth_dataset(a.inputs, seed, &Preprocessor::default())
        .map_err(|e| CliError::csi("synth", e))?
        .iter()
        .map(|s| wisense_core::images_to_tensor(&[&s.image]))
        .collect::<wisense_core::Result<_>>()
        .map_err(|e| CliError::core("bench", e))?;
    let path = match a.path {
        PathArg::Early => ExitPath::Early,
        PathArg::Full => ExitPath::Full,
        PathArg::Auto => ExitPath::Auto,
        PathArg::Compare => {
            let cfg = BenchConfig {
                warmup: a.warmup,
                reps: a.reps,
                include_auto: true,
            };
            let r = compare(&model, &inputs, cfg).map_err(|e| CliError::core("bench", e))?;
            let text = format!(
                "{}\nearly/full time ratio {:.3} (reduction {:.1}%), MAC ratio {:.3}",
                r.table(),
                r.time_ratio,
                100.0 * r.speedup_reduction,
                r.mac_ratio
            );
            return Ok(Output { json: to_json(&r), text });
        }
    };
    let s = measure(&model, &inputs, path, a.warmup, a.reps).map_err(|e| CliError::core("bench", e))?;
    let text = format!(
        "{} path: mean {:.3} ms, median {:.3} ms, p95 {:.3} ms over {} reps",
        s.path,
        s.mean_ns / 1e6,
        s.median_ns / 1e6,
        s.p95_ns / 1e6,
        s.samples
    );
    Ok(Output { json: to_json(&s), text })
}

fn monitor(cli: &Cli) -> Result<Output> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Usage("monitor needs --config <file>".into()))?;
    let cfg = wisense_monitor::MonitorConfig::load(path).map_err(CliError::monitor)?;
    let stop = wisense_monitor::shutdown_on_signals().map_err(CliError::monitor)?;
    let r = wisense_monitor::run(&cfg, &stop).map_err(CliError::monitor)?;
    let text = format!(
        "frames {}  windows {}  failed {}  early exits {}  alarms {}\n\
         telemetry delivered {}  dropped {}  dead-lettered {}  retries {}  reconnects {}{}",
        r.frames,
        r.windows,
        r.failed_windows,
        r.early_exits,
        r.alarms.len(),
        r.telemetry.delivered,
        r.telemetry.dropped,
        r.telemetry.dead_letter,
        r.telemetry.retries,
        r.reconnects,
        if r.interrupted { "  (interrupted)" } else { "" }
    );
    Ok(Output { json: to_json(&r), text })
}
