//! `beamsense` command-line driver.

mod commands;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use error::{CliError, EXIT_CONFIG};

#[derive(Debug, Parser)]
#[command(name = "beamsense", version, about = "Wi-Fi sensing from compressed beamforming feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic scenario file.
    Scenario(ScenarioArgs),
    /// Simulate a sounding session into a record file and session manifest.
    Simulate(SimulateArgs),
    /// Codec self-test and record-file conversion.
    #[command(subcommand)]
    Codec(CodecCommand),
    /// Window, tensorize and split record files into a dataset.
    Dataset(DatasetArgs),
    /// Train a classifier from scratch on the training split.
    Train(TrainArgs),
    /// Adapt a model to a new domain from its first seconds of data.
    Adapt(AdaptArgs),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ScenarioArgs {
    /// Output scenario JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Room layout index.
    #[arg(long, default_value_t = 0)]
    pub env: usize,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(2..=20))]
    pub classes: u32,
    /// Sub-channels per frame.
    #[arg(long, default_value_t = 234, value_parser = clap::value_parser!(u16).range(1..))]
    pub k: u16,
    /// Seconds per activity.
    #[arg(long, default_value_t = 300.0)]
    pub duration: f64,
    /// Mean sounding rate in Hz.
    #[arg(long, default_value_t = 100.0)]
    pub rate: f64,
    /// Sounding jitter as a fraction of the period, in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum CodecCommand {
    /// Round-trip, spectral-equivalence and quantization checks on random channels.
    Selftest(SelftestArgs),
    /// Record file to JSON angle dump.
    Decode(DecodeArgs),
    /// JSON angle dump to record file.
    Encode(EncodeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 1000)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct DecodeArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EncodeArgs {
    /// JSON angle dump.
    #[arg(long)]
    pub input: PathBuf,
    /// Output record file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DatasetArgs {
    /// Record file; its session manifest is `manifest.json` in the same directory. Repeatable.
    #[arg(long, required = true)]
    pub records: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Window length in seconds.
    #[arg(long = "window-w", default_value_t = 0.1)]
    pub window_w: f64,
    /// Keep the first N sub-channels.
    #[arg(long)]
    pub subchannels: Option<usize>,
    /// Comma-separated angle indices in emission order.
    #[arg(long, value_delimiter = ',')]
    pub angles: Option<Vec<usize>>,
    /// Comma-separated station indices.
    #[arg(long, value_delimiter = ',')]
    pub stations: Option<Vec<usize>>,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.1,0.1")]
    pub splits: Vec<f64>,
    /// Packets per window; computed from the training split when absent.
    #[arg(long)]
    pub s: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset manifest (`dataset.json`).
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Width multiplier in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    pub batch: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct AdaptArgs {
    /// Target-domain dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Starting checkpoint; a fresh model is used when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Seconds at the start of each activity recording used for adaptation.
    #[arg(long)]
    pub delta: f64,
    /// Meta step size in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long = "meta-iterations", default_value_t = 20)]
    pub meta_iterations: usize,
    /// Points sampled per meta-iteration; defaults to the batch size.
    #[arg(long = "meta-k")]
    pub meta_k: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    pub batch: u32,
    /// Width multiplier for a fresh model.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    pub split: String,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("BEAMSENSE_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::config("config_invalid", format!("BEAMSENSE_THREADS={value} is not a positive integer")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config("config_invalid", e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Scenario(a) => commands::scenario(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Codec(CodecCommand::Selftest(a)) => commands::selftest(&a),
        Command::Codec(CodecCommand::Decode(a)) => commands::decode(&a),
        Command::Codec(CodecCommand::Encode(a)) => commands::encode(&a),
        Command::Dataset(a) => commands::dataset(&a),
        Command::Train(a) => commands::train(&a),
        Command::Adapt(a) => commands::adapt(&a),
        Command::Eval(a) => commands::eval(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::config("usage", e.to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    match run(cli) {
        Ok(summary) => {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.code as u8)
        }
    }
}
