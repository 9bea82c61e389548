use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "wisense", version, about = "WiFi CSI occupancy and activity sensing with an early-exit GhostNet")]
pub struct Cli {
    /// Seed for synthesis, initialization, shuffling and augmentation.
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    /// Kernel thread cap; 1 gives fully deterministic runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,
    /// JSON settings: a training config for `train`, a monitor config for `monitor`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn a pcap capture into a labeled radio-image dataset.
    Ingest(IngestArgs),
    /// Generate a synthetic dataset covering every scenario.
    Synth(SynthArgs),
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Classification metrics of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Early versus full inference latency.
    Bench(BenchArgs),
    /// Run the streaming monitor daemon from the `--config` file.
    Monitor,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub pcap: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file `{"nulls": [...], "pilots": [...]}` replacing the VHT-80 tone plan.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Packets per window.
    #[arg(long, default_value_t = wisense_csi::WINDOW)]
    pub window: usize,
    #[arg(long, default_value_t = wisense_csi::DEFAULT_SMOOTHING)]
    pub smoothing: usize,
    /// UDP destination port of CSI packets; any port when omitted.
    #[arg(long)]
    pub port: Option<u16>,
    /// Occupancy label for every window: nobody, one_person, two_persons.
    #[arg(long)]
    pub rod: Option<String>,
    /// Activity label for every window: sit, stand, walk, stand_up, sit_down.
    #[arg(long)]
    pub har: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Full-size network.
    Full,
    /// Quarter-width network for desk-scale training.
    Desk,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub no_augment: bool,
    /// Share of the dataset held out and scored after training.
    #[arg(long, default_value_t = 0.0)]
    pub holdout: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Rod,
    Har,
    Both,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = TaskArg::Both)]
    pub task: TaskArg,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PathArg {
    Early,
    Full,
    Auto,
    /// Early and full interleaved, plus auto.
    Compare,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Checkpoint to time; a freshly built full-size network when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub reps: usize,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    #[arg(long, value_enum, default_value_t = PathArg::Compare)]
    pub path: PathArg,
    /// Distinct synthetic inputs cycled through.
    #[arg(long, default_value_t = 4)]
    pub inputs: usize,
}
