//! `pip`: generate synthetic gait data, train models, stream inference and
//! evaluate on held-out cycles.

mod commands;
mod stream;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "pip", version, about = "Periodic interaction primitives")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalOpts {
    /// Overrides the generator seed. Only `synth` draws random numbers.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    pub format: Format,
    /// Suppress summaries and progress messages. Warnings and errors still
    /// go to stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Human,
    /// JSON reports; JSON lines for `infer`.
    Machine,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset from a generator config (TOML).
    Synth(SynthArgs),
    /// Train a model from a dataset file.
    Train(TrainArgs),
    /// Stream frames from a file or stdin and print per-frame predictions.
    Infer(InferArgs),
    /// Score a model on held-out cycles.
    Eval(EvalArgs),
    /// Check a dataset, model or generator config file.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    /// Overrides `n_cycles`.
    #[arg(long)]
    pub cycles: Option<usize>,
    /// Overrides `first_cycle_id`.
    #[arg(long)]
    pub first_cycle_id: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    /// Basis functions per DOF.
    #[arg(long, default_value_t = pip_core::basis::DEFAULT_BASIS_COUNT)]
    pub basis_count: usize,
    /// Per-DOF basis count, `NAME=COUNT`. Repeatable.
    #[arg(long = "basis", value_name = "NAME=COUNT", value_parser = parse_override)]
    pub basis: Vec<(String, usize)>,
    /// Fixed basis concentration for every DOF; default depends on the count.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Ridge strength relative to the mean design Gram diagonal.
    #[arg(long, default_value_t = 1e-6)]
    pub ridge: f64,
    /// Phase table bins along the position axis.
    #[arg(short = 'E', long, default_value_t = pip_core::manifold::DEFAULT_POSITION_BINS)]
    pub position_bins: usize,
    /// Phase table bins along the velocity axis.
    #[arg(short = 'F', long, default_value_t = pip_core::manifold::DEFAULT_VELOCITY_BINS)]
    pub velocity_bins: usize,
    /// Sakoe-Chiba band half-width for alignment; unconstrained by default.
    #[arg(long)]
    pub dtw_band: Option<usize>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    pub model: PathBuf,
    /// Frame stream; `-` reads stdin.
    #[arg(long, default_value = "-")]
    pub input: PathBuf,
    /// DOFs to report, comma separated. Default: every latent and controlled DOF.
    #[arg(long = "predict", value_delimiter = ',')]
    pub predict: Vec<String>,
    /// Samples per cycle in the `--trajectory` output.
    #[arg(short = 'P', long, default_value_t = 100)]
    pub samples: usize,
    /// Append the predictive standard deviation after each value.
    #[arg(long)]
    pub emit_band: bool,
    /// After the stream ends, write the final per-phase mean and std of the
    /// reported DOFs to this CSV file.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Also report the DTW baseline phase over this many recent frames.
    #[arg(long)]
    pub baseline_window: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    /// Mask k = 0..D_s-1 sensors and report the inferred-DOF error curve.
    #[arg(long)]
    pub dropout_sweep: bool,
    /// Compare lookup phase against the DTW baseline, with timing.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long, default_value_t = 100)]
    pub baseline_window: usize,
    /// Training dataset; refuse to evaluate if any cycle_id appears in both.
    #[arg(long)]
    pub training_data: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    pub path: PathBuf,
}

fn parse_override(s: &str) -> Result<(String, usize), String> {
    let (name, count) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=COUNT, got `{s}`"))?;
    let count = count
        .trim()
        .parse()
        .map_err(|_| format!("basis count `{count}` is not a nonnegative integer"))?;
    Ok((name.trim().to_string(), count))
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    /// Usage, configuration or data problem: exit 2.
    Input(String),
    /// Internal numeric failure: exit 3.
    Numeric(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<pip_core::Error> for Failure {
    fn from(e: pip_core::Error) -> Self {
        match e {
            pip_core::Error::Numeric(_) => Failure::Numeric(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let outcome = match &cli.command {
        Command::Synth(a) => commands::synth(a, g),
        Command::Train(a) => commands::train(a, g),
        Command::Infer(a) => commands::infer(a, g),
        Command::Eval(a) => commands::eval(a, g),
        Command::Validate(a) => commands::validate(a, g),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
