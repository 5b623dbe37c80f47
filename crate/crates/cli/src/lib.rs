//! `span`: train, run, evaluate and benchmark SPAN super-resolution models.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (missing or malformed files, mismatched weights), 3 numeric failure
//! (non-finite training loss, failed gradient check).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod outcome;

pub use outcome::Failure;

#[derive(Debug, Parser)]
#[command(name = "span", version, about = "SPAN super-resolution engine")]
pub struct Cli {
    /// Worker threads for intra-op parallelism (default: all cores, or 1 with --deterministic).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Reproducible mode: single-threaded unless --threads is given.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Write freshly initialised weights for a config.
    Init(InitArgs),
    /// Upscale a PNG file or every PNG in a directory.
    Infer(InferArgs),
    /// PSNR/SSIM report against a dataset, with a bicubic baseline.
    Eval(EvalArgs),
    /// Finite-difference check of every backward pass.
    Gradcheck(GradcheckArgs),
    /// Time the forward pass.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run config.
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset root (`HR/*.png`, or PNGs directly inside).
    #[arg(long)]
    pub data: PathBuf,
    /// Output weight file.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many steps (a checkpoint is written so the run can be resumed).
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Checkpoint path (default: the output path with extension `.ckpt`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// CSV training log (default: the output path with extension `.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Store the fused (single 3×3 kernel per conv) form.
    #[arg(long)]
    pub fuse: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// A PNG file or a directory of PNGs.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory; files keep their stems.
    #[arg(long)]
    pub out: PathBuf,
    /// Fuse re-parameterisation branches before running.
    #[arg(long)]
    pub fuse: bool,
    /// Expected scale; a mismatch with the weights is an error.
    #[arg(long)]
    pub scale: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Report path; `.json` writes JSON, anything else CSV.
    #[arg(long)]
    pub report: PathBuf,
    /// Pixels cropped from each border before scoring (default: the scale).
    #[arg(long)]
    pub border: Option<usize>,
    /// Ignore `LR/X{r}` and degrade HR images on the fly.
    #[arg(long)]
    pub degrade: bool,
    #[arg(long)]
    pub fuse: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Floating-point precision of the check; only 64 is supported.
    #[arg(long, default_value_t = 64)]
    pub precision: u32,
    /// Negative control: perturbs every analytic gradient so the check must fail.
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Input size as HxW (low-resolution pixels).
    #[arg(long, default_value = "256x256")]
    pub size: String,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long)]
    pub fuse: bool,
}

fn configure_threads(cli: &Cli) -> Result<(), Failure> {
    let threads = cli.threads.or(cli.deterministic.then_some(1));
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads(&cli)?;
    match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Init(a) => commands::init(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Bench(a) => commands::bench(&a),
    }
}
