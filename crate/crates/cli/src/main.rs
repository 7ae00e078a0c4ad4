//! `hypoinv`: rate tables, single MAP estimates and experiment runs.
//!
//! Exit codes: 0 success, 1 usage, 2 configuration, 3 runtime failure.

mod commands;
mod config;
mod fieldio;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use commands::{EstimateArgs, RatesArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hypoinv", version, about = "Gaussian Bayesian inversion on the torus")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "HYPOINV_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "HYPOINV_OUT")]
    out: Option<PathBuf>,
    /// Master seed; overrides the configuration file.
    #[arg(long, global = true, env = "HYPOINV_SEED")]
    seed: Option<u64>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true, env = "HYPOINV_FORCE", action = ArgAction::SetTrue)]
    force: bool,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "HYPOINV_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print predicted exponents, regimes and hypothesis warnings.
    Rates {
        #[arg(long, allow_hyphen_values = true)]
        r: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        s: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        t: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        t0: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        d: Option<f64>,
        #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
        zeta: Vec<f64>,
        #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
        zeta1: Vec<f64>,
        #[arg(long, allow_hyphen_values = true)]
        kappa: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        alpha: Option<f64>,
    },
    /// Compute the MAP estimate and posterior trace for one data set.
    Estimate {
        #[arg(long)]
        delta: Option<f64>,
        /// Measurement file; synthetic data is generated when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Truth for synthetic data: prior, hat or zero.
        #[arg(long)]
        truth: Option<String>,
        /// Grid points per dimension.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Run an experiment and write its tables and plot series.
    Experiment {
        /// bayes, frequentist, contraction, credible or appendix_b.
        #[arg(long)]
        mode: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let file = match &cli.config {
        Some(p) => config::load(p)?,
        None => config::FileConfig::default(),
    };
    let out = || cli.out.clone().ok_or_else(|| CliError::Usage("--out is required".into()));
    match cli.command {
        Command::Rates { r, s, t, t0, d, zeta, zeta1, kappa, alpha } => {
            commands::rates(&file, RatesArgs { r, s, t, t0, d, zeta, zeta1, kappa, alpha })
        }
        Command::Estimate { delta, data, truth, n } => {
            let out = out()?;
            commands::estimate(&file, EstimateArgs { delta, data, truth, n }, cli.seed, &out, cli.force)
        }
        Command::Experiment { mode } => {
            let out = out()?;
            commands::experiment(&file, mode, cli.seed, &out, cli.force)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
