//! Batch experiment driver over the core library: tree search data
//! collection, preference training, evaluation, exact oracle dumps, and
//! the full search-train-evaluate improvement loop. One config file
//! drives everything; identical config and seed reproduce every artifact
//! byte for byte.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numerical divergence.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::artifacts::OutDir;
use crate::config::ExperimentConfig;

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub enum CliError {
    /// Bad settings: malformed config file, invalid values, bad env vars.
    Config(String),
    /// Missing or malformed inputs and artifacts, and IO failures.
    Data(String),
    /// Training blew up numerically.
    Divergence(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Divergence(m) => write!(f, "divergence: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl From<treeq_core::Error> for CliError {
    fn from(e: treeq_core::Error) -> Self {
        use treeq_core::Error as E;
        match &e {
            E::Divergence(_) => CliError::Divergence(e.to_string()),
            E::InvalidArgument(_) | E::UnknownWorld(_) | E::InvalidTask(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "treeq",
    version,
    about = "Tree-search agents with preference training on simulated web tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config, .toml or .json.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides out_dir from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run tree search over the train tasks and store trees, rollouts,
    /// and a replay buffer.
    Search(Common),
    /// Train a policy on a stored replay buffer.
    Train(Common),
    /// Score a policy on the eval tasks, zero-shot or with search.
    Eval(Common),
    /// Solve the eval tasks exactly and store per-state optimal values.
    Oracle(Common),
    /// Run the full search-train-evaluate improvement loop.
    Loop(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Search(_) => "search",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Oracle(_) => "oracle",
            Command::Loop(_) => "loop",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Search(c)
            | Command::Train(c)
            | Command::Eval(c)
            | Command::Oracle(c)
            | Command::Loop(c) => c,
        }
    }
}

fn run(command: &Command) -> Result<(), CliError> {
    let common = command.common();
    let cfg = ExperimentConfig::load(
        &common.config,
        common.out.as_deref(),
        common.seed,
    )?;
    let out = OutDir::prepare(&cfg)?;
    out.log(&format!(
        "{} started (config_hash={})",
        command.name(),
        out.config_hash
    ))?;
    let result = match command {
        Command::Search(_) => commands::search(&cfg, &out),
        Command::Train(_) => commands::train(&cfg, &out),
        Command::Eval(_) => commands::eval(&cfg, &out),
        Command::Oracle(_) => commands::oracle(&cfg, &out),
        Command::Loop(_) => commands::improvement_loop(&cfg, &out),
    };
    match &result {
        Ok(()) => out.log(&format!("{} finished", command.name()))?,
        Err(e) => out.log(&format!("{} failed: {e}", command.name()))?,
    }
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("treeq: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
