use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kernfuse::harness::config::ConfigError;
use kernfuse::harness::{dump_operators, parse_config, run_experiment, ConfigErrors, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "kernfuse", version, about = "Two-agent kernel regression with a fusion center")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write metrics, final functions and a checkpoint.
    Run {
        config: PathBuf,
        /// Overrides `[run] seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the fusion-space operators for a configuration.
    DumpOperators { config: PathBuf },
    /// Parse and check a configuration without running it.
    Validate { config: PathBuf },
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// An unreadable config file counts as invalid input.
fn load(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigErrors(vec![ConfigError::Validation { field: path.display().to_string(), message: e.to_string() }])
    })?;
    Ok(parse_config(&text)?)
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run { config, seed, out } => {
            let mut cfg = load(&config)?;
            if let Some(seed) = seed {
                cfg.run.seed = seed;
            }
            let summary = run_experiment(&cfg, out.as_deref())?;
            print!("{}", summary.render());
        }
        Command::DumpOperators { config } => {
            let cfg = load(&config)?;
            print!("{}", dump_operators(&cfg)?);
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            kernfuse::harness::assemble(&cfg)?;
            for w in &cfg.warnings {
                println!("warning: {w}");
            }
            println!("{}: ok", config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_VALIDATION) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let HarnessError::Run { summary, .. } = &e {
                print!("{}", summary.render());
            }
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}
