//! `rbmgradlab`: dataset conversion, CD-1 training, estimator variance
//! profiling and report aggregation.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric abort.

mod commands;
mod manifest;
mod report_io;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<rbm_gradlab::Error> for CliError {
    fn from(e: rbm_gradlab::Error) -> Self {
        use rbm_gradlab::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidConfig(_)
            | E::InvalidSteps(_)
            | E::TooFewEstimates(_)
            | E::TooLargeToEnumerate { .. } => CliError::Usage(msg),
            E::NonFinite(_) | E::Diverged { .. } => CliError::Numeric(msg),
            _ => CliError::Data(msg),
        }
    }
}

#[derive(Parser)]
#[command(name = "rbmgradlab", version, about = "Variance of RBM gradient estimators", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest MNIST, CIFAR-10 or silhouette files into an RBMDS1 container
    Convert(ConvertArgs),
    /// Train a binary RBM with CD-1 and write RBMCKPT1 checkpoints
    Train(TrainArgs),
    /// Measure estimator variances at checkpoints and write a report CSV
    Profile(ProfileArgs),
    /// Aggregate a report CSV into a summary JSON
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SourceFormat {
    /// IDX images then IDX labels
    Mnist,
    /// One or more CIFAR-10 binary batches
    Cifar,
    /// A CSV with 256 binary values per row
    Silhouettes,
}

#[derive(Args)]
pub struct ConvertArgs {
    /// Input files (gzip is detected automatically)
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub format: SourceFormat,
    /// Output RBMDS1 file; its stem becomes the dataset id
    #[arg(long)]
    pub out: PathBuf,
    /// MNIST: examples kept per digit
    #[arg(long)]
    pub per_digit: Option<usize>,
    /// CIFAR: number of leading images kept
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub minibatch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub lr_mode: Option<LrModeArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Epochs at which to write checkpoints, e.g. `10,500` or `0..5`
    #[arg(long)]
    pub checkpoints: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, env = "RBMGRADLAB_JOBS")]
    pub jobs: Option<usize>,
    /// JSON file with defaults for any of the flags above
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LrModeArg {
    Fixed,
    Adaptive,
}

#[derive(Args)]
pub struct ProfileArgs {
    /// Checkpoint file; repeat for several epochs and inits
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated subset of cd, icd, pcd
    #[arg(long)]
    pub strategies: Option<String>,
    /// Chain lengths, e.g. `1..10` (inclusive) or `1,2,5,10`
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub k_baseline: Option<usize>,
    /// Estimates per training example
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Number of distinct init seeds the checkpoints must cover
    #[arg(long)]
    pub inits: Option<usize>,
    /// Profile an evenly spaced subset of this many examples
    #[arg(long)]
    pub subset: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// PCD mean-estimate lengths, same syntax as `--k`
    #[arg(long)]
    pub pcd_lengths: Option<String>,
    #[arg(long)]
    pub pcd_burn_in: Option<usize>,
    #[arg(long, value_enum)]
    pub binarization: Option<BinarizationArg>,
    #[arg(long, value_enum)]
    pub icd_start: Option<IcdStartArg>,
    #[arg(long, env = "RBMGRADLAB_JOBS")]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Summary JSON; defaults to the report path with a `.summary.json` suffix
    #[arg(long)]
    pub summary_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BinarizationArg {
    Resample,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum IcdStartArg {
    Uniform,
    ExcludeSelf,
    Pinned,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated strategies to keep; empty keeps all
    #[arg(long, default_value = "")]
    pub strategies: String,
    /// Expected number of init seeds; defaults to the number present
    #[arg(long)]
    pub inits: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Convert(a) => commands::convert(&a),
        Command::Train(a) => commands::train(&a),
        Command::Profile(a) => commands::profile(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
