use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use openfloor::tools::{self, ToolError};
use openfloor::{serve, AppState, ServerOptions};
use openfloor_core::domain::{AuctionId, Millis};
use openfloor_core::rpc::{hash_password, DEFAULT_CAPACITY_RPS};

#[derive(Parser)]
#[command(name = "openfloor", version, about = "Realtime online auction server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP server.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        /// Event log and snapshot directory; without one nothing is persisted.
        #[arg(long, env = "OPENFLOOR_DATA_DIR")]
        data_dir: Option<PathBuf>,
        /// Directory of companies and persons (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_CAPACITY_RPS)]
        capacity_rps: f64,
        /// Use a manual clock starting at this time (ms), moved through
        /// POST /api/sim/clock.
        #[arg(long, num_args = 0..=1, default_missing_value = "0")]
        sim_clock: Option<Millis>,
    },
    /// Print the decoded records of an event log.
    Inspect { data_dir: PathBuf },
    /// Check an event log for plausibility; exits non-zero on findings.
    Verify { data_dir: PathBuf },
    /// Regenerate the role reports of a finished auction.
    Report {
        auction_id: String,
        #[arg(long, env = "OPENFLOOR_DATA_DIR")]
        data_dir: PathBuf,
    },
    /// Run a simulation scenario.
    Sim {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the full trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Hash a password for the directory file.
    HashPassword { password: String },
}

fn run(command: Command) -> Result<bool, ToolError> {
    match command {
        Command::Serve {
            listen,
            data_dir,
            config,
            capacity_rps,
            sim_clock,
        } => {
            let directory = match &config {
                Some(path) => tools::load_directory(path)?,
                None => Default::default(),
            };
            if data_dir.is_none() {
                tracing::warn!("no data directory, running in memory only");
            }
            let state = AppState::build(ServerOptions {
                data_dir,
                directory,
                capacity_rps: Some(capacity_rps),
                sim_clock,
            })
            .map_err(ToolError)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(state, &listen))?;
            Ok(true)
        }
        Command::Inspect { data_dir } => {
            println!("{}", tools::inspect(&data_dir)?);
            Ok(true)
        }
        Command::Verify { data_dir } => {
            let (text, clean) = tools::verify(&data_dir)?;
            print!("{text}");
            Ok(clean)
        }
        Command::Report {
            auction_id,
            data_dir,
        } => {
            for path in tools::report(&data_dir, &AuctionId::new(auction_id))? {
                println!("{}", path.display());
            }
            Ok(true)
        }
        Command::Sim {
            scenario,
            seed,
            trace,
        } => {
            let summary = tools::run_sim(&scenario, seed)?;
            print!("{}", summary.text);
            if let Some(path) = trace {
                std::fs::write(&path, tools::trace_lines(&summary.trace)?)?;
            }
            Ok(summary.clean)
        }
        Command::HashPassword { password } => {
            println!("{}", hash_password(&password, &mut rand::rngs::OsRng));
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(ToolError(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
