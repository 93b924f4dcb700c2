//! `bgnn` command-line entry point.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
mod config;
mod data;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::FixtureKind;
use config::{RunConfig, RunFlags, SweepParam};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or inputs; nothing was run.
    Usage(String),
    /// Failure while running.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "bgnn", version, about = "Boosted sequential distillation between graph neural networks")]
struct Cli {
    /// Repeat for more logging (`-v` info, `-vv` debug); `RUST_LOG` also works.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one plan for every seed.
    Train(RunFlags),
    /// Repeat `train` over values of one parameter.
    Sweep {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, value_enum)]
        param: Option<SweepParam>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Layer-wise linear CKA between checkpoints.
    Cka {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write deterministic fixture datasets.
    MakeFixtures {
        #[arg(long, value_enum)]
        kind: FixtureKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(flags) => commands::train(&RunConfig::resolve(&flags)?).map(|_| ()),
        Command::Sweep { run, param, values } => commands::sweep(&RunConfig::resolve(&run)?, param, values),
        Command::Cka {
            checkpoints,
            dataset,
            out,
        } => commands::cka(&checkpoints, &dataset, &out),
        Command::MakeFixtures { kind, seed, out } => commands::make_fixtures(kind, seed, &out).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
