//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 an experiment ran but at least one trend check failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use autoddpm::config::RunConfig;
use autoddpm::experiments::{self, Experiment, Outcome};
use autoddpm::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_TRENDS: u8 = 3;

#[derive(Parser)]
#[command(name = "autoddpm", version, about = "Mask, stitch and re-sample anomaly detection with a diffusion model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Dataset directory, overriding the configuration.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Model directory, overriding the configuration.
    #[arg(long)]
    model_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic phantom dataset.
    GenerateData {
        #[command(flatten)]
        common: Common,
        /// Replace an existing dataset generated from another configuration.
        #[arg(long)]
        force: bool,
    },
    /// Train the denoiser, resuming from an existing checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Start from scratch even if a checkpoint exists.
        #[arg(long)]
        force: bool,
    },
    /// Run the full pipeline on one image file.
    Detect {
        #[command(flatten)]
        common: Common,
        /// Input image container.
        #[arg(long)]
        input: PathBuf,
    },
    /// Single-level baseline sweep against the full pipeline.
    NoiseParadox {
        #[command(flatten)]
        common: Common,
    },
    /// Localization per lesion-size stratum.
    SizeStrata {
        #[command(flatten)]
        common: Common,
    },
    /// Pipeline ablations and reconstruction panels.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> autoddpm::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &common.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(d) = &common.model_dir {
        cfg.model_dir = d.clone();
    }
    cfg.resolve(common.seed)
}

fn out_dir(common: &Common, default: &Path) -> PathBuf {
    common.out.clone().unwrap_or_else(|| default.to_path_buf())
}

fn run(command: Command) -> autoddpm::Result<Outcome> {
    let common = match &command {
        Command::GenerateData { common, .. }
        | Command::Train { common, .. }
        | Command::Detect { common, .. }
        | Command::NoiseParadox { common }
        | Command::SizeStrata { common }
        | Command::Ablate { common } => common.clone(),
    };
    let cfg = load_config(&common)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| match command {
        Command::GenerateData { force, .. } => {
            experiments::generate_data(&cfg, &out_dir(&common, &cfg.data_dir), force)
        }
        Command::Train { force, .. } => experiments::train(&cfg, &out_dir(&common, &cfg.model_dir), force),
        Command::Detect { input, .. } => {
            experiments::detect_image(&cfg, &input, &out_dir(&common, Path::new("runs/detect")))
        }
        Command::NoiseParadox { .. } => run_experiment(Experiment::NoiseParadox, &cfg, &common),
        Command::SizeStrata { .. } => run_experiment(Experiment::SizeStrata, &cfg, &common),
        Command::Ablate { .. } => run_experiment(Experiment::Ablate, &cfg, &common),
    })
}

fn run_experiment(experiment: Experiment, cfg: &RunConfig, common: &Common) -> autoddpm::Result<Outcome> {
    let default = Path::new("runs").join(experiment.name());
    experiments::run_experiment(experiment, cfg, &out_dir(common, &default))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(outcome) => {
            println!("{}", outcome.message);
            for c in &outcome.checks {
                println!(
                    "{} {}: {} (threshold {}) {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold,
                    c.detail
                );
            }
            if outcome.trends_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_TRENDS)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { EXIT_DATA } else { EXIT_USAGE })
        }
    }
}
