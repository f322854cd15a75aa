use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tactile_core::dataset::DurationRange;
use tactile_core::model::{Arch, TrainConfig};
use tactile_core::session::ScriptStep;

#[derive(Debug, Parser)]
#[command(name = "tactile", version, about = "Tactile-skin gesture recognition and robot teleoperation pipeline")]
pub struct Cli {
    /// Session config file (TOML).
    #[arg(long, global = true, env = "TACTILE_CONFIG")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize labelled recordings or a scripted capture.
    #[command(subcommand)]
    Generate(Generate),
    /// Augment recordings into a split dataset file.
    Augment(AugmentArgs),
    /// Train a classifier, printing one JSON line per epoch.
    Train(TrainArgs),
    /// Print accuracy and the confusion matrix of trained weights.
    Eval(EvalArgs),
    /// Measure single-window classify latency.
    Bench(BenchArgs),
    /// Run a capture through the session and print its event log.
    Replay(ReplayArgs),
    /// Serve a live session over WebSocket.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum Generate {
    /// One capture per recording plus a manifest, for every class.
    Recordings {
        #[arg(long, default_value_t = 10)]
        per_class: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Time-stretch every gesture to a duration drawn from `lo..hi` ms.
        #[arg(long)]
        duration_ms: Option<DurationRange>,
        #[arg(long)]
        out: PathBuf,
    },
    /// A scripted session capture, e.g. `--gestures TranslateZPos:1000,AuxHome`.
    Capture {
        #[arg(long, value_delimiter = ',', required = true)]
        gestures: Vec<ScriptStep>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Directory written by `generate recordings`.
    #[arg(long)]
    pub recordings: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub per_recording: usize,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = Arch::Hybrid)]
    pub arch: Arch,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().seed)]
    pub seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().patience)]
    pub patience: usize,
}

impl TrainArgs {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            patience: self.patience,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Val)]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Weights to time; a freshly initialized model of `--arch` otherwise.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = Arch::Hybrid)]
    pub arch: Arch,
    #[arg(long, default_value_t = 1000)]
    pub windows: usize,
    /// Fail when the mean latency exceeds this many milliseconds.
    #[arg(long, default_value_t = 50.0)]
    pub max_ms: f64,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// `.skn` capture; the config's input source otherwise.
    #[arg(long)]
    pub capture: Option<PathBuf>,
    /// Overrides the config's weight path.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Write the event log here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Rate the capture was recorded at; resampled to the tick rate.
    #[arg(long)]
    pub input_rate: Option<u32>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8765")]
    pub addr: SocketAddr,
    /// Append every emitted event to this file.
    #[arg(long)]
    pub event_log: Option<PathBuf>,
}
