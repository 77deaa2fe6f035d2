//! `rrll`: generate synthetic data, train and sweep the correction layer,
//! evaluate checkpoints and relabel new datasets.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Failure classes, one per exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration (exit 2).
    Usage(String),
    /// Missing or malformed input data (exit 3).
    Data(String),
    /// Training diverged (exit 4).
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "{m}"),
        }
    }
}

impl From<rrll::Error> for CliError {
    fn from(e: rrll::Error) -> Self {
        use rrll::Error as E;
        match e {
            E::Domain(_) | E::RuleParse { .. } | E::Generation(_) => CliError::Usage(e.to_string()),
            E::Load { .. } | E::Format { .. } | E::Io { .. } => CliError::Data(e.to_string()),
            E::Numerical { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "rrll",
    version,
    about = "Rule-based reinforcement learning layer for label correction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for data generation and training.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Rules file replacing the profile's builtin rules.
    #[arg(long, global = true, value_name = "PATH")]
    rules: Option<PathBuf>,
    /// Output directory [default: $RRLL_OUT, else ./runs].
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override one config field, e.g. `--set train.lr=1e-3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write synthetic train/test datasets and a generation manifest.
    Generate,
    /// Train on the train split; write per-epoch stats and a checkpoint.
    Train,
    /// Train every grid cell and seed; write a manifest and per-cell results.
    Sweep,
    /// Score a checkpoint on the test split against the base predictor.
    Eval,
    /// Relabel `paths.input` with a checkpoint.
    Correct,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train => "train",
            Command::Sweep => "sweep",
            Command::Eval => "eval",
            Command::Correct => "correct",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let overrides = config::Overrides {
        config: cli.common.config,
        seed: cli.common.seed,
        rules: cli.common.rules,
        out: cli.common.out,
        sets: cli.common.sets,
    };
    let env_out = std::env::var_os(config::OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from);
    let cfg = config::resolve(&overrides, env_out)?;
    let ctx = commands::Context::new(cfg, cli.command.name())?;
    match cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Sweep => commands::sweep(&ctx),
        Command::Eval => commands::eval(&ctx),
        Command::Correct => commands::correct(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rrll: {e}");
            ExitCode::from(e.code())
        }
    }
}
