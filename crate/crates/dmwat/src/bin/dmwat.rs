//! Command-line front end; all substance lives in the library.

use clap::{Parser, Subcommand};
use dmwat::cli::{self, Overrides};
use dmwat::eval::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dmwat",
    about = "Desk-scale multimodal wound-referral pipeline",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct CommonFlags {
    /// Run configuration (JSON). Validation failures print a canonical
    /// example config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the primary head (svm or mlp).
    #[arg(long)]
    head: Option<String>,
    /// Override the primary modality (image, text or fused).
    #[arg(long)]
    modality: Option<String>,
    /// Override the number of test-time-augmentation views.
    #[arg(long)]
    tta: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset.
    GenData {
        /// Output directory for dataset.jsonl, images/ and gen_meta.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Total number of cases.
        #[arg(long, default_value_t = 60)]
        cases: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train on a stratified split and write a checkpoint.
    Train {
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Cross-validated comparison of all modality/head conditions.
    Evaluate {
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Decision plus per-class scores for one case.
    Predict {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        case_id: String,
    },
    /// Saliency map (image) or token attribution (text) for one case.
    Explain {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        case_id: String,
        /// Integrated-gradients steps (text modality).
        #[arg(long, default_value_t = 256)]
        steps: usize,
    },
    /// Materialize a balanced, augmented copy of the dataset into the output
    /// directory (use --out to redirect it).
    Augment {
        #[command(flatten)]
        common: CommonFlags,
    },
}

fn overrides(flags: &CommonFlags) -> dmwat::Result<Overrides> {
    Ok(Overrides {
        seed: flags.seed,
        out: flags.out.clone(),
        head: flags.head.as_deref().map(str::parse).transpose()?,
        modality: flags.modality.as_deref().map(str::parse).transpose()?,
        tta: flags.tta,
    })
}

fn run() -> dmwat::Result<()> {
    match Cli::parse().command {
        Command::GenData { out, cases, seed } => cli::gen_data(&out, cases, seed),
        Command::Train { common } => {
            let cfg = cli::load_config(&common.config, &overrides(&common)?)?;
            cli::train(&cfg).map(|_| ())
        }
        Command::Evaluate { common } => {
            let cfg = cli::load_config(&common.config, &overrides(&common)?)?;
            cli::evaluate(&cfg)
        }
        Command::Predict {
            common,
            checkpoint,
            case_id,
        } => {
            let cfg = cli::load_config(&common.config, &overrides(&common)?)?;
            cli::predict(&cfg, &checkpoint, &case_id)
        }
        Command::Explain {
            common,
            checkpoint,
            case_id,
            steps,
        } => {
            let cfg = cli::load_config(&common.config, &overrides(&common)?)?;
            cli::explain(&cfg, &checkpoint, &case_id, steps)
        }
        Command::Augment { common } => {
            let cfg = cli::load_config(&common.config, &overrides(&common)?)?;
            let out = cfg.out_dir.clone();
            cli::augment(&cfg, &out)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, dmwat::Error::Config(_)) {
                eprintln!("\ncanonical config example:\n{}", RunConfig::canonical_example_json());
            }
            ExitCode::FAILURE
        }
    }
}
