mod common;
mod config;
mod correlate;
mod datasets;
mod search;
mod worker;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gramnas::encoder::Variant;
use gramnas::surrogate::{NormalizationMethod, SurrogateKind};

/// Exit status 2 for bad flags and config, 3 for failures while running.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "gramnas",
    version,
    about = "Surrogate-assisted evolution over a grammar search space"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an evolutionary search from a config file or a previous run's manifest.
    Search(SearchArgs),
    /// Fit a surrogate on training rows and report rank correlation on test rows.
    EvalCorrelation(EvalCorrelationArgs),
    /// Leave-one-dataset-out correlation over every dataset tag in the input.
    TransferEval(TransferEvalArgs),
    /// Expand a dataset with function-preserving rewrites and label noise.
    Augment(AugmentArgs),
    /// Print encodings of random compiling architectures.
    Encode(EncodeArgs),
    /// Fit a forest surrogate and write it as JSON.
    FitSurrogate(FitSurrogateArgs),
    /// Minimal surrogate worker speaking the bridge protocol on stdio.
    #[command(hide = true)]
    StubWorker,
}

#[derive(Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub surrogate: Option<SurrogateKind>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Options shared by the commands that fit a surrogate.
#[derive(Args, Clone)]
pub struct SurrogateArgs {
    #[arg(long, default_value = "forest")]
    pub surrogate: SurrogateKind,
    #[arg(long, default_value = "percentile")]
    pub normalization: NormalizationMethod,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub n_trees: Option<usize>,
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
    /// Leave out training rows with accuracy exactly 0.
    #[arg(long)]
    pub drop_zero_fitness: bool,
    /// Encoding sent to an external worker.
    #[arg(long, value_parser = common::parse_variant, default_value = "with-shapes")]
    pub variant: Variant,
    /// Worker command line for `--surrogate external`.
    #[arg(long)]
    pub worker: Option<String>,
    /// Grammar file; the built-in grammar when omitted.
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    #[arg(long, value_parser = common::parse_shape, default_value = "3,32,32")]
    pub input_shape: gramnas::compiler::TensorShape,
}

#[derive(Args)]
pub struct EvalCorrelationArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub train: Vec<PathBuf>,
    /// Test file; without it the test rows come after the training prefix.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Train on the first m rows only.
    #[arg(long)]
    pub train_prefix: Option<usize>,
    /// Predict at most this many rows.
    #[arg(long)]
    pub eval_window: Option<usize>,
    /// Slide forward by this many rows, refitting on everything before each window.
    #[arg(long)]
    pub refit_every: Option<usize>,
    /// Predict with a model written by `fit-surrogate` instead of fitting.
    #[arg(long, conflicts_with_all = ["train_prefix", "refit_every"])]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub surrogate: SurrogateArgs,
}

#[derive(Args)]
pub struct TransferEvalArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    /// Also train on the first m rows of the held-out dataset.
    #[arg(long, default_value_t = 0)]
    pub holdout_prefix: usize,
    /// Predict at most this many held-out rows.
    #[arg(long)]
    pub eval_window: Option<usize>,
    #[command(flatten)]
    pub surrogate: SurrogateArgs,
}

#[derive(Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub factor: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub grammar: Option<PathBuf>,
}

#[derive(Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = common::parse_variant, default_value = "plain")]
    pub variant: Variant,
    /// Write here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    #[arg(long, default_value_t = gramnas::grammar::DEFAULT_MAX_DEPTH)]
    pub max_depth: usize,
    #[arg(long, value_parser = common::parse_shape, default_value = "3,32,32")]
    pub input_shape: gramnas::compiler::TensorShape,
}

#[derive(Args)]
pub struct FitSurrogateArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub train: Vec<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub surrogate: SurrogateArgs,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Search(a) => search::run(a),
        Command::EvalCorrelation(a) => correlate::eval_correlation(a),
        Command::TransferEval(a) => correlate::transfer_eval(a),
        Command::FitSurrogate(a) => correlate::fit_surrogate(a),
        Command::Augment(a) => datasets::augment(a),
        Command::Encode(a) => datasets::encode(a),
        Command::StubWorker => worker::serve(std::io::stdin().lock(), std::io::stdout().lock()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gramnas: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
