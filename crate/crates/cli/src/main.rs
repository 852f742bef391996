//! `tidedown` command-line tool.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

#[derive(Parser)]
#[command(name = "tidedown", version, about = "Arbitrary-scale downscaling of tidal-current fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic LR/HR dataset split into train/val/test.
    Synth(SynthArgs),
    /// Train a model from a JSON run config.
    Train(TrainArgs),
    /// Downscale an LR field to any real scale >= 1.
    Infer(InferArgs),
    /// Score a prediction against ground truth.
    Eval(EvalArgs),
    /// Print the MAC cost table.
    Flops(FlopsArgs),
    /// Evaluate the four ablation checkpoints on the test split.
    Ablate(HarnessArgs),
    /// Evaluate the FMS ratio checkpoints on the test split.
    Tradeoff(HarnessArgs),
    /// Render one channel of a field as a grayscale PGM.
    Render(RenderArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 96)]
    pub hr_height: usize,
    #[arg(long, default_value_t = 96)]
    pub hr_width: usize,
    /// Integer LR to HR factor.
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long, default_value_t = 64)]
    pub timesteps: usize,
    #[arg(long, default_value_t = 3)]
    pub n_constituents: usize,
    #[arg(long, default_value_t = 0.2)]
    pub land_fraction: f64,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude_scale: f64,
    /// Train, val and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = config::DEFAULT_SPLIT)]
    pub split: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub no_atm: bool,
    #[arg(long)]
    pub no_pe: bool,
    /// `a:b` or `none`.
    #[arg(long)]
    pub fms: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `paths.name`.
    #[arg(long)]
    pub name: Option<String>,
    /// Overrides `train.epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from the run's existing checkpoint.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Method {
    Asm,
    Bicubic,
}

#[derive(Args)]
pub struct InferArgs {
    /// Required for `--method asm`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub scale: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Asm)]
    pub method: Method,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value = "pred")]
    pub label: String,
    /// Recorded in the report only.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum TableFormat {
    Text,
    Csv,
}

#[derive(Args)]
pub struct FlopsArgs {
    /// Model config or run config JSON; the full-size configuration when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TableFormat::Text)]
    pub format: TableFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct HarnessArgs {
    /// Directory holding the checkpoints.
    #[arg(long)]
    pub checkpoints: PathBuf,
    /// Directory holding `test_lr.tcds` and `test_hr.tcds`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write each variant's prediction here (ablation only).
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Channel {
    U,
    V,
    Level,
}

#[derive(Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long, value_enum, default_value_t = Channel::Level)]
    pub channel: Channel,
    #[arg(long, default_value_t = 0)]
    pub t: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Further fields tiled to the right on a shared scale.
    #[arg(long, num_args = 1..)]
    pub compare: Vec<PathBuf>,
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("TIDEDOWN_THREADS") else {
        return Ok(());
    };
    let n: usize = match raw.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => bail!("TIDEDOWN_THREADS must be a positive integer, got `{raw}`"),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Flops(a) => commands::flops(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Tradeoff(a) => commands::tradeoff(a),
        Command::Render(a) => commands::render(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
