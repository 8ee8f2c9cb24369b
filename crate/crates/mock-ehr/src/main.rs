use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use labdash_core::DashboardConfig;
use mock_ehr::{FailMode, GeneratorSpec, MockServer};
use tracing::info;

#[derive(Parser)]
#[command(name = "mock-ehr", version, about = "Fixture-backed stand-in for the OpenMRS REST API")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve observations from a CSV fixture.
    Serve {
        #[arg(long)]
        fixtures: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8081")]
        bind: SocketAddr,
        #[arg(long, default_value = "none")]
        fail_mode: FailMode,
        /// Patient demographics (patient_uuid,display,gender,birthdate).
        #[arg(long)]
        patients: Option<PathBuf>,
        /// Concept registry; defaults to the built-in configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a seeded synthetic history for one patient.
    Generate {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        visits: u32,
        #[arg(long, default_value_t = 30)]
        interval_days: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<DashboardConfig> {
    match path {
        Some(p) => DashboardConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(mock_ehr::default_config()),
    }
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve {
            fixtures,
            bind,
            fail_mode,
            patients,
            config,
        } => {
            let config = load_config(config.as_ref())?;
            let mut store = mock_ehr::load_fixtures(&fixtures, &config)
                .with_context(|| format!("loading {}", fixtures.display()))?;
            if let Some(p) = patients {
                let records = mock_ehr::load_patients(&p).with_context(|| format!("loading {}", p.display()))?;
                store = store.with_patients(records);
            }
            let rows = store.row_count();
            let server = MockServer::start(store, bind, fail_mode)
                .await
                .with_context(|| format!("binding {bind}"))?;
            info!(addr = %server.addr(), rows, %fail_mode, "mock-ehr listening");
            eprintln!("mock-ehr serving {rows} observations at {}", server.base_url());
            server.run_until_ctrl_c().await?;
        }
        Command::Generate {
            seed,
            visits,
            interval_days,
            out,
            config,
        } => {
            let config = load_config(config.as_ref())?;
            let spec = GeneratorSpec::for_config(&config, seed, visits, interval_days);
            let rows = mock_ehr::generate(&spec, &config)?;
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            mock_ehr::write_csv(&rows, BufWriter::new(file))?;
            eprintln!("wrote {} rows for patient {} to {}", rows.len(), spec.patient_uuid(), out.display());
        }
    }
    Ok(())
}
