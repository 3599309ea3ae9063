//! Command line front end for the single-track car model.
//!
//! One static binary, four subcommands:
//!
//! * `tire`       tabulates the tire force surfaces and the grip envelope,
//! * `equilibria` traces cornering equilibrium branches and summarizes them,
//! * `simulate`   integrates the car from an initial state under scripted
//!   inputs,
//! * `explore`    runs the full trajectory exploration pipeline along a
//!   track.
//!
//! Every run is driven by one plain-text TOML config file. A few flags
//! override the file (`--out`, `--force`), and exactly two environment
//! variables are honored: `LTCAR_OUTPUT_DIR` replaces the output directory
//! and `LTCAR_THREADS` caps the worker thread count. All quantities are SI
//! (meters, seconds, radians, newtons) unless a name says otherwise.
//!
//! Outputs are CSV and JSON written with full 17 significant digit floats,
//! so a repeated run with an identical config reproduces its files byte for
//! byte. Each file gets a `<name>.meta.json` sidecar recording the hash of
//! the resolved config; re-running into the same directory with a different
//! config is refused unless `--force` is passed.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod output;

/// Exit status 2: the config file or command line is wrong.
/// Exit status 3: the math failed (no equilibrium, divergence, bad data).
/// Exit status 4: the file system got in the way.
#[derive(Clone, Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn config(msg: impl fmt::Display) -> Self {
        CliError::Config(msg.to_string())
    }

    pub fn numeric(msg: impl fmt::Display) -> Self {
        CliError::Numeric(msg.to_string())
    }

    pub fn io(msg: impl fmt::Display) -> Self {
        CliError::Io(msg.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "ltcar", version, about = "Single-track car model toolbox")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Tabulate tire forces over slip grids and sweep the grip envelope.
    Tire(RunArgs),
    /// Trace cornering equilibrium branches and summarize them.
    Equilibria(RunArgs),
    /// Integrate the car from an initial state under scripted inputs.
    Simulate(RunArgs),
    /// Design a speed profile along a track and optimize trajectories.
    Explore(RunArgs),
}

/// Flags shared by every subcommand.
#[derive(Args, Debug)]
pub struct RunArgs {
    /// Path to the TOML config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides the config file and LTCAR_OUTPUT_DIR).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite outputs left by a run with a different config.
    #[arg(long)]
    pub force: bool,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Tire(_) => "tire",
            Command::Equilibria(_) => "equilibria",
            Command::Simulate(_) => "simulate",
            Command::Explore(_) => "explore",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Tire(a) | Command::Equilibria(a) | Command::Simulate(a) | Command::Explore(a) => a,
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let resolved = config::load(cli.command.args())?;
    match &cli.command {
        Command::Tire(_) => commands::tire::run(&resolved),
        Command::Equilibria(_) => commands::equilibria::run(&resolved),
        Command::Simulate(_) => commands::simulate::run(&resolved),
        Command::Explore(_) => commands::explore::run(&resolved),
    }
}

/// Runs `f`, limiting rayon to `LTCAR_THREADS` workers when that is set.
/// A scoped pool keeps the cap local to this call instead of mutating the
/// global pool, which may already be initialized (for example by tests).
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match std::env::var("LTCAR_THREADS") {
        Ok(raw) if !raw.is_empty() => {
            let n: usize = raw
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| CliError::config("LTCAR_THREADS must be a positive integer"))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::config(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        _ => Ok(f()),
    }
}
