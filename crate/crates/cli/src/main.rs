//! `donn` — train, evaluate, attack, and calibrate diffractive optical
//! neural network simulations from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};

use crate::commands::InferInput;
use crate::config::CONFIG_HELP;
use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "donn",
    version,
    about = "Diffractive optical neural network simulator, trainer, and attack toolkit",
    propagate_version = true
)]
struct Cli {
    /// Cap the worker thread pool; defaults to all available cores.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run configuration; writes model.donn,
    /// history.csv, and confusion.csv into out_dir.
    #[command(after_help = CONFIG_HELP)]
    Train(ConfigArgs),

    /// Classify one image with a trained model and export the camera
    /// intensity as a PGM.
    Infer(InferArgs),

    /// Attack a test set with masked single-step pixel flips; writes
    /// before/after confusion matrices, a summary, and sample PGMs.
    #[command(after_help = CONFIG_HELP)]
    Attack(ModelConfigArgs),

    /// Evaluate a trained model on a test set: confusion matrix only.
    #[command(after_help = CONFIG_HELP)]
    Eval(ModelConfigArgs),

    /// Simulate the phase-scan calibration experiment and export the scan
    /// curve plus per-phase camera patterns.
    Calibrate(CalibrateArgs),

    /// Inspect IDX dataset files: image count, dimensions, label histogram.
    IdxInfo(IdxInfoArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (flat `key = value` lines).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,

    /// Override one config key, e.g. --set epochs=3. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct ModelConfigArgs {
    /// Trained model checkpoint.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,

    /// Run configuration file; supplies the dataset and out_dir (geometry
    /// comes from the checkpoint).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,

    /// Override one config key, e.g. --set attack_samples=3. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["image", "synthetic"])))]
struct InferArgs {
    /// Trained model checkpoint.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,

    /// Input image as binary PGM, sized exactly to the model window.
    #[arg(long, value_name = "FILE")]
    image: Option<PathBuf>,

    /// Draw one synthetic sample of this digit instead of reading a file.
    #[arg(long, value_name = "DIGIT")]
    synthetic: Option<u8>,

    /// Seed for --synthetic sampling.
    #[arg(long, default_value_t = 0, value_name = "SEED")]
    sample_seed: u64,

    /// Directory for the exported camera PGM.
    #[arg(long, default_value = ".", value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Square simulation window side, in SLM pixels.
    #[arg(long, default_value_t = 97, value_name = "N")]
    grid_n: usize,

    /// Opaque padding ring width.
    #[arg(long, default_value_t = 16, value_name = "N")]
    pad: usize,

    /// Side of the centered phase-shifted square, in pixels.
    #[arg(long, default_value_t = 6, value_name = "N")]
    square: usize,

    /// Propagation distance to the camera, metres.
    #[arg(long, default_value_t = 1.1176, value_name = "M")]
    z: f64,

    /// Pixel pitch, metres.
    #[arg(long, default_value_t = 36e-6, value_name = "M")]
    pitch: f64,

    /// Wavelength, metres.
    #[arg(long, default_value_t = 532e-9, value_name = "M")]
    wavelength: f64,

    /// Number of evenly spaced phases scanned across [0, pi].
    #[arg(long, default_value_t = 11, value_name = "N")]
    steps: usize,

    /// Directory for scan.csv and pattern_*.pgm.
    #[arg(long, default_value = ".", value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct IdxInfoArgs {
    /// IDX image file.
    #[arg(long, value_name = "FILE")]
    images: PathBuf,

    /// IDX label file; adds a per-label histogram and a count cross-check.
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size the thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Train(args) => commands::cmd_train(&args.config, &args.set),
        Command::Infer(args) => commands::cmd_infer(
            &args.model,
            &InferInput {
                image: args.image.clone(),
                synthetic: args.synthetic,
                sample_seed: args.sample_seed,
            },
            &args.out_dir,
        ),
        Command::Attack(args) => commands::cmd_attack(&args.model, &args.config, &args.set),
        Command::Eval(args) => commands::cmd_eval(&args.model, &args.config, &args.set),
        Command::Calibrate(args) => commands::cmd_calibrate(
            args.grid_n,
            args.pad,
            args.square,
            args.z,
            args.pitch,
            args.wavelength,
            args.steps,
            &args.out_dir,
        ),
        Command::IdxInfo(args) => commands::cmd_idx_info(&args.images, args.labels.as_deref()),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
