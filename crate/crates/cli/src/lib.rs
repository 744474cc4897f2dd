//! Command-line front end for `nvgrav`.
//!
//! Each command reads an optional TOML config, runs, and writes delimited
//! tables into the output directory. Every table starts with `#` header
//! lines holding the tool version, the resolved configuration and
//! truncation diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] nvgrav::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 config, 3 numerical guard, 4 I/O or input parsing.
    pub fn exit_code(&self) -> i32 {
        use nvgrav::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 4,
            CliError::Core(e) if e.is_numerical_guard() => 3,
            CliError::Core(E::Eigen(_)) => 3,
            CliError::Core(E::Io(_) | E::Parse { .. } | E::EmptyInput) => 4,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nvgrav", version, about = "Ramsey interferometry of a levitated NV nanodiamond")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw (overrides `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for grid sweeps.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// P₀ over the (c_x, θ) grid: fringe.csv and visibility.csv.
    Fringe,
    /// Perturbative fidelity over the (λ, γ) grid: fidelity_grid.csv.
    FidelityGrid,
    /// One Ramsey sequence at `sequence.theta`: ramsey.csv.
    Ramsey,
    /// Welch PSD and Lorentzian peak fits of a trace: psd.csv and peaks.csv.
    Psd {
        /// Trace file (overrides `psd.input`).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Synthetic trap trace: trace.txt.
    Synth,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fringe => "fringe",
            Command::FidelityGrid => "fidelity-grid",
            Command::Ramsey => "ramsey",
            Command::Psd { .. } => "psd",
            Command::Synth => "synth",
        }
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            RunConfig::parse(&text).map_err(|e| match e {
                CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
                other => other,
            })?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Command::Psd { input: Some(p) } = &cli.command {
        cfg.psd.input = Some(p.clone());
    }
    Ok(cfg)
}

/// Runs one invocation and returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let cfg = resolve_config(cli)?;
    let work = || commands::dispatch(&cli.command, &cfg);
    match cli.jobs {
        Some(0) => Err(CliError::Config("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?
            .install(work),
        None => work(),
    }
}
