mod daemons;
mod list;
mod plotdata;
mod settings;
mod sim;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    DaemonConfig(#[from] lluad_daemon::config::ConfigError),
    #[error(transparent)]
    Daemon(#[from] lluad_daemon::DaemonError),
    #[error(transparent)]
    Key(#[from] lluad_daemon::keys::KeyError),
    #[error(transparent)]
    Trace(#[from] lluad_core::sim::trace::TraceError),
    #[error(transparent)]
    Generator(#[from] lluad_core::sim::generator::GeneratorError),
    #[error(transparent)]
    Maintenance(#[from] lluad_core::maintenance::MaintenanceError),
    #[error(transparent)]
    Exposure(#[from] lluad_core::sim::exposure::ExposureError),
    #[error(transparent)]
    Output(#[from] lluad_core::sim::output::OutputError),
    #[error(transparent)]
    List(#[from] lluad_core::list::ListError),
    #[error(transparent)]
    ListDecode(#[from] lluad_core::list::ListDecodeError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Parser)]
#[command(name = "lluad", version, about = "Popularity-list DNS resolver: daemons and experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `key = value` file; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the list server.
    Server(daemons::ServerArgs),
    /// Run the client resolver daemon.
    Client(daemons::ClientArgs),
    /// Create a server key, client keys and a registry.
    Keygen(daemons::KeygenArgs),
    /// Run an experiment.
    #[command(subcommand)]
    Sim(sim::SimCommand),
    /// Synthetic query traces.
    #[command(subcommand)]
    Trace(TraceCommand),
    /// Build or inspect serialized popularity lists.
    #[command(subcommand)]
    List(list::ListCommand),
    /// Write figure-ready CSVs for every experiment.
    Plotdata(plotdata::PlotArgs),
}

#[derive(Subcommand)]
enum TraceCommand {
    /// Generate a synthetic Zipf trace as CSV.
    Gen(sim::TraceArgs),
}

fn run(cli: Cli, common: Common) -> Result<(), CliError> {
    match cli.command {
        Command::Server(a) => daemons::server(a, &common),
        Command::Client(a) => daemons::client(a, &common),
        Command::Keygen(a) => daemons::keygen(a, &common),
        Command::Sim(c) => sim::run(c, &common),
        Command::Trace(TraceCommand::Gen(a)) => sim::trace_gen(a, &common),
        Command::List(c) => list::run(c, &common),
        Command::Plotdata(a) => plotdata::run(a, &common),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // Usage errors exit with status 2.
    let cli = Cli::parse();
    let common = cli.common.clone();
    match run(cli, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
