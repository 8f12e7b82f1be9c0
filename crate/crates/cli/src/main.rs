//! `fmrme`: simulate radio map datasets, pre-train the masked autoencoder,
//! run inference on single maps and evaluate reconstruction tasks.
//!
//! Failures print one line `error: code=<code> msg=<message>` on stderr and
//! exit with a code that depends on the failure class:
//!
//! | exit | code                                   |
//! |------|----------------------------------------|
//! | 1    | anything not listed below              |
//! | 2    | `usage` (unknown flag, bad flag value) |
//! | 3    | `malformed_file`                       |
//! | 4    | `shape_mismatch`                       |
//! | 5    | `protocol`                             |
//! | 6    | `io`                                   |
//! | 7    | `config`, `invalid_argument`           |

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fmrme_core::Error;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "FMRME_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "fmrme-out";

#[derive(Debug, Parser)]
#[command(name = "fmrme", version, about = "Radio map simulation, masked pre-training and zero-shot estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset directory of radio maps.
    Simulate(SimulateArgs),
    /// Pre-train a model on one or more dataset directories.
    Pretrain(PretrainArgs),
    /// Estimate a full map from one sample file and a mask file.
    Infer(InferArgs),
    /// Evaluate an estimator on a reconstruction task.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Dataset config file (TOML). Mutually exclusive with --preset.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in dataset preset, D1 to D7.
    #[arg(long)]
    pub preset: Option<String>,
    /// Number of maps to simulate.
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
    /// Base seed; sample `i` uses a seed derived from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory. Defaults to `$FMRME_OUT_DIR/<config name>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Dataset directory; repeat for several datasets.
    #[arg(long = "data", required = true)]
    pub data: Vec<PathBuf>,
    /// Training config file (TOML); flags below override its fields.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    /// Model config file (TOML).
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for initialization, batching and masking.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rows per training window; 0 trains on whole maps.
    #[arg(long)]
    pub window_rows: Option<usize>,
    /// Disable gradient-norm clipping.
    #[arg(long)]
    pub no_clip: bool,
    /// Print a progress line every this many steps (0 disables).
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
    /// Checkpoint path. Defaults to `$FMRME_OUT_DIR/model.fmck`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training log CSV. Defaults to the checkpoint path with `.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sample file (RMAP, dBm).
    #[arg(long)]
    pub sample: PathBuf,
    /// Mask file (RMAP header plus visibility bitmap).
    #[arg(long)]
    pub mask: PathBuf,
    /// Output sample file with the estimate in dBm. Defaults to
    /// `$FMRME_OUT_DIR/estimate.rmap`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskKind {
    Spatial,
    Temporal,
    Spectral,
    ZeroShot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorKind {
    Fmrme,
    Kriging,
    Mean,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub task: TaskKind,
    #[arg(long, value_enum)]
    pub estimator: EstimatorKind,
    /// Dataset directory to evaluate on.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint; required for the fmrme estimator and the zero-shot task.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Fraction of voxels left visible (spatial and zero-shot tasks).
    #[arg(long, default_value_t = 0.3)]
    pub sparsity: f64,
    /// First hidden slot (temporal task). Defaults to `ceil(n_t / 2)`.
    #[arg(long)]
    pub t_h: Option<usize>,
    /// Comma-separated target bands (spectral task). Defaults to the last band.
    #[arg(long, value_delimiter = ',')]
    pub bands: Vec<usize>,
    /// Fraction of each target band hidden (spectral task).
    #[arg(long, default_value_t = 1.0)]
    pub band_ratio: f64,
    /// Seed for the per-sample masks.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-sample CSV. Defaults to `$FMRME_OUT_DIR/eval_<task>_<estimator>.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Default output directory from the environment.
pub fn out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Format(_) => 3,
        Error::ShapeMismatch { .. } => 4,
        Error::Protocol(_) => 5,
        Error::Io(_) => 6,
        Error::Config(_) | Error::InvalidArgument(_) => 7,
        _ => 1,
    }
}

fn report(code: &str, msg: &str) {
    eprintln!("error: code={code} msg={}", msg.replace('\n', " "));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            report("usage", &e.kind().to_string());
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Pretrain(a) => commands::pretrain(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.code(), &e.to_string());
            ExitCode::from(exit_code(&e))
        }
    }
}
