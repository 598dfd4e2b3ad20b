//! `nowcast`: ingest, simulate, backtest, nowcast and audit from one
//! TOML run configuration.

mod appendix;
mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};

use error::{CliError, EXIT_OK};

#[derive(Parser)]
#[command(name = "nowcast", version, about = "Real-time nowcasting with audited release packages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an observation CSV and optionally merge it into a store.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        /// Observation store to merge into (created when missing).
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Draw a synthetic panel with publication lags.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Walk-forward evaluation, coverage, model confidence set and weights.
    Backtest {
        #[arg(long)]
        config: PathBuf,
    },
    /// Release package for one forecast origin.
    Nowcast {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        origin: NaiveDate,
    },
    /// Leakage verdict and dashboard indicators.
    Audit {
        #[arg(long)]
        config: PathBuf,
    },
}

fn init_threads(command: &Command) -> Result<(), CliError> {
    let cfg_path = match command {
        Command::Backtest { config } | Command::Nowcast { config, .. } | Command::Audit { config } => Some(config),
        _ => None,
    };
    // a broken config is reported by the command itself
    let cfg = cfg_path
        .and_then(|p| std::fs::read_to_string(p).ok())
        .and_then(|t| config::parse(&t).ok());
    if let Some(n) = config::threads(cfg.as_ref())? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::validation(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    init_threads(&cli.command)?;
    match cli.command {
        Command::Ingest { data, store } => commands::ingest(&data, store.as_deref()),
        Command::Simulate { spec, out } => commands::simulate_cmd(&spec, &out),
        Command::Backtest { config } => commands::backtest(&config),
        Command::Nowcast { config, origin } => commands::nowcast(&config, origin),
        Command::Audit { config } => commands::audit(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_OK as u8);
        }
        Err(e) => {
            let err = CliError::validation(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code as u8);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::from(EXIT_OK as u8)
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code as u8)
        }
    }
}
