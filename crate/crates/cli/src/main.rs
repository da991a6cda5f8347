//! Batch entry point: simulate | fit | summarize | predict | validate.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use commands::CommandContext;

/// Error classes mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config: exit 1, nothing written.
    Usage(String),
    /// Failure during execution: exit 2.
    Runtime(String),
    /// A self-validation suite failed: exit 3.
    ValidationFailed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::ValidationFailed(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) | CliError::ValidationFailed(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "epikernel",
    version,
    about = "Spatial SIR transmission-kernel inference and culling-policy evaluation"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Root RNG seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 is the bit-stable reference path. Defaults to
    /// available parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; overrides the config. Defaults to the current
    /// directory.
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Continue a fit from its checkpoint instead of starting over.
    #[arg(long, global = true)]
    resume: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an outbreak and export the observed dataset plus ground truth.
    Simulate,
    /// Fit the transmission model to an observed farm file by MCMC.
    Fit,
    /// Summarize a posterior trace: rate curve, infectious period, scores.
    Summarize,
    /// Evaluate ring-culling policies under the posterior predictive.
    Predict,
    /// Run the internal validation suites.
    Validate {
        /// Test hook: inject a likelihood perturbation so the oracle suite
        /// must fail.
        #[arg(long, hide = true, default_value_t = 0.0)]
        perturb_likelihood: f64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let loaded = config::load(cli.config.as_deref())?;
    let cfg = loaded.config;

    let workers = cli.workers.or(cfg.workers).unwrap_or(0);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        pool = pool.num_threads(workers);
    }
    pool.build_global()
        .map_err(|e| CliError::Runtime(format!("cannot configure worker pool: {e}")))?;

    let ctx = CommandContext {
        seed: cli.seed.or(cfg.seed),
        output_dir: cli
            .output_dir
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(".")),
        resume: cli.resume,
        parse: cfg.parse.clone().unwrap_or_else(|| {
            let mut p = epikernel::data::ParseOptions::default();
            p.date_mode = epikernel::data::DateMode::DayOffset;
            p
        }),
        config_sha256: hex::encode(Sha256::digest(&loaded.raw)),
    };

    match cli.command {
        Command::Simulate => commands::cmd_simulate(&cfg, &ctx),
        Command::Fit => commands::cmd_fit(&cfg, &ctx),
        Command::Summarize => commands::cmd_summarize(&cfg, &ctx),
        Command::Predict => commands::cmd_predict(&cfg, &ctx),
        Command::Validate { perturb_likelihood } => {
            commands::cmd_validate(&cfg, &ctx, perturb_likelihood)
        }
    }
}
