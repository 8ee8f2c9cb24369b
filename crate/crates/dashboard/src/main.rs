use std::process::ExitCode;

use clap::{Parser, Subcommand};
use labdash::{prepare, ServeArgs, Server};
use tracing::info;

#[derive(Parser)]
#[command(name = "labdash", version, about = "Diabetes lab results dashboard")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start the HTTP API.
    Serve(ServeArgs),
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let Command::Serve(args) = Cli::parse().command;
    let prepared = match prepare(&args, std::env::var("LABDASH_EHR_PASSWORD").ok()) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("labdash: {e}");
            return ExitCode::FAILURE;
        }
    };
    let bands = prepared.config.band_specs().count();
    let server = match Server::start(prepared).await {
        Ok(s) => s,
        Err(e) => {
            eprintln!("labdash: {e}");
            return ExitCode::FAILURE;
        }
    };
    info!(addr = %server.addr(), bands, "labdash listening");
    if let Err(e) = server.run_until_ctrl_c().await {
        eprintln!("labdash: {e}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
