//! Command-line front end: argument parsing, configuration files and the
//! four subcommands.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

pub use config::{Command, RunConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "kbahc", version, about = "Bootstrapped hierarchical covariance cleaning and GMV backtests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: SubCommand,
}

#[derive(Debug, Subcommand)]
pub enum SubCommand {
    /// Estimate one cleaned covariance matrix from the end of a panel.
    Clean(Flags),
    /// Rolling-window GMV backtest with transaction costs.
    Backtest(Flags),
    /// Realized risk over random calibration windows and asset subsets.
    Experiment(Flags),
    /// Eigenvalues and eigenvector IPRs against a shuffled null.
    Spectra(Flags),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML file with any of the flag keys (underscores instead of dashes).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// `prices` or `returns`.
    #[arg(long)]
    pub input_kind: Option<String>,
    /// Approximation orders for bare `kbahc` entries.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Bootstrap replicas.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub dt_in: Option<Vec<usize>>,
    #[arg(long)]
    pub dt_out: Option<usize>,
    #[arg(long)]
    pub cost_bps: Option<f64>,
    #[arg(long)]
    pub long_only: bool,
    /// Comma-separated: eq, sample, cv[:folds], kbahc[:k[:m:seed]].
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub start: Option<NaiveDate>,
    #[arg(long)]
    pub end: Option<NaiveDate>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub n_assets: Option<usize>,
    #[arg(long)]
    pub t_min: Option<usize>,
    #[arg(long)]
    pub t_max: Option<usize>,
    #[arg(long)]
    pub bootstrap_samples: Option<usize>,
    /// Number of calibration windows for `spectra`.
    #[arg(long)]
    pub windows: Option<usize>,
}

impl Flags {
    fn into_config(self) -> RunConfig {
        RunConfig {
            input: self.input,
            input_kind: self.input_kind,
            out: self.out,
            estimators: self.estimators,
            k: self.k,
            m: self.m,
            seed: self.seed,
            dt_in: self.dt_in,
            dt_out: self.dt_out,
            cost_bps: self.cost_bps,
            long_only: self.long_only.then_some(true),
            threads: self.threads,
            start: self.start,
            end: self.end,
            reps: self.reps,
            n_assets: self.n_assets,
            t_min: self.t_min,
            t_max: self.t_max,
            bootstrap_samples: self.bootstrap_samples,
            windows: self.windows,
        }
    }
}

/// Resolves the configuration for a parsed command line.
pub fn resolve(sub: SubCommand) -> Result<(Command, RunConfig), CliError> {
    let (command, mut flags) = match sub {
        SubCommand::Clean(f) => (Command::Clean, f),
        SubCommand::Backtest(f) => (Command::Backtest, f),
        SubCommand::Experiment(f) => (Command::Experiment, f),
        SubCommand::Spectra(f) => (Command::Spectra, f),
    };
    let file = match flags.config.take() {
        Some(path) => RunConfig::load(&path)?,
        None => RunConfig::default(),
    };
    let cfg = file.merge(flags.into_config()).resolve(command)?;
    Ok((command, cfg))
}

/// Resolves and runs, inside a dedicated thread pool when `threads` is set.
pub fn execute(sub: SubCommand) -> Result<Vec<PathBuf>, CliError> {
    let (command, cfg) = resolve(sub)?;
    match cfg.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
            pool.install(|| commands::run(command, &cfg))
        }
        None => commands::run(command, &cfg),
    }
}
