use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;

use commands::SolveKind;
use config::ExperimentConfig;
use error::CliError;

/// Particle solvers and sampled monotonicity checks for mean field games
/// and mean field control.
///
/// Exit codes: 0 success, 1 output error, 2 solver failure, 3 failed check,
/// 4 configuration error. Errors are also written to stderr as one line of JSON.
#[derive(Parser, Debug)]
#[command(name = "meanfield", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment config.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override a config key (dotted for nested keys, bare names for model
    /// parameters). Repeatable; applied in order.
    #[arg(long = "set", global = true, value_name = "K=V")]
    set: Vec<String>,

    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for the solver internals; 1 runs sequentially.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mean field game equilibrium.
    SolveMfg,
    /// Mean field control optimum.
    SolveMftc,
    /// Mean field game with a drift nonlinear in the control.
    SolveMfgGeneric,
    /// Mean field control with a drift nonlinear in the control.
    SolveMftcGeneric,
    /// Run one sampled condition check on the configured model.
    Check {
        /// One of the names in the README, e.g. displacement_quasi.
        condition: String,
    },
    /// Closed-form thresholds from the model's declared constants.
    Thresholds,
    /// Particle solutions against the closed-form LQ solutions.
    LqCompare,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let mut sets = cli.set;
    if let Some(seed) = cli.seed {
        sets.push(format!("seed={seed}"));
    }
    if let Some(out) = cli.out {
        sets.push(format!(
            "output_dir={}",
            serde_json::Value::String(out.display().to_string())
        ));
    }
    let config = ExperimentConfig::load(cli.config.as_deref(), &sets)?;
    match cli.command {
        Command::SolveMfg => commands::solve(&config, SolveKind::Mfg),
        Command::SolveMftc => commands::solve(&config, SolveKind::Mftc),
        Command::SolveMfgGeneric => commands::solve(&config, SolveKind::MfgGeneric),
        Command::SolveMftcGeneric => commands::solve(&config, SolveKind::MftcGeneric),
        Command::Check { condition } => commands::check(&config, &condition),
        Command::Thresholds => commands::thresholds(&config),
        Command::LqCompare => commands::lq_compare(&config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json_line());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
