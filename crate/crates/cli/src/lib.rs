//! Argument definitions and dispatch for the `gconv` executable.
//!
//! Exit codes: 0 success, 1 invalid arguments or configuration, 2 failure
//! while running (I/O, a failed check).

pub mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "gconv", version, about = "Generalized convolution on irregular 2-D domains")]
pub struct Cli {
    /// Worker threads for the numeric kernels (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model on distorted MNIST and write results/<run-id>/.
    Train(TrainArgs),
    /// Train every (sigma, model) pair and write summary.csv.
    Sweep(SweepArgs),
    /// Run the finite-difference gradient suites.
    Gradcheck(GradcheckArgs),
    /// Compare the regular-grid generalized conv with a dense 2-D convolution.
    CheckEquivalence(EquivalenceArgs),
    /// Print a displaced pixel grid as `id,x,y` CSV.
    Distort(DistortArgs),
    /// Build a receptive graph and print it as `dst src slot` lines.
    InspectGraph(InspectArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory holding the MNIST IDX files (falls back to GCONV_MNIST_DIR).
    #[arg(long)]
    pub mnist: Option<PathBuf>,
    /// Number of training images used.
    #[arg(long, default_value_t = 5_000)]
    pub train_size: usize,
    /// Number of test images used.
    #[arg(long, default_value_t = 1_000)]
    pub test_size: usize,
    /// Domain distortion: one shared domain or a fresh one per image.
    #[arg(long, default_value = "shared")]
    pub mode: String,
}

#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Weight decay on weights (not biases).
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    /// Seeds initialization, shuffling and distortion.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ArchArgs {
    /// Window half-width in cells.
    #[arg(long)]
    pub p: Option<usize>,
    /// Window half-height in cells.
    #[arg(long)]
    pub q: Option<usize>,
    /// Cell size of the window.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Feature maps per conv layer, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub feature_maps: Option<Vec<usize>>,
    /// Width of every hidden dense layer.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Size the MLP's hidden layers to match the GCNN parameter count.
    #[arg(long)]
    pub match_params: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "gcnn")]
    pub model: String,
    /// Standard deviation of the pixel displacement, in pixel pitches.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Architecture file of `key=value` lines; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub arch: ArchArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,1,2")]
    pub sigmas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "gcnn,mlp")]
    pub models: Vec<String>,
    /// Runs executed concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub arch: ArchArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Accepted instances per suite.
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
}

#[derive(Debug, Args)]
pub struct EquivalenceArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    #[arg(long, default_value_t = 2)]
    pub q: usize,
    #[arg(long, default_value_t = 28)]
    pub width: usize,
    #[arg(long, default_value_t = 28)]
    pub height: usize,
}

#[derive(Debug, Args)]
pub struct DistortArgs {
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 28)]
    pub width: usize,
    #[arg(long, default_value_t = 28)]
    pub height: usize,
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// `id,x,y` CSV as printed by `distort`; default is a displaced grid.
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 28)]
    pub width: usize,
    #[arg(long, default_value_t = 28)]
    pub height: usize,
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    #[arg(long, default_value_t = 2)]
    pub q: usize,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Write the edge list to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
