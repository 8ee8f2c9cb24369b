//! Startup: resolve flags and environment, load the config, build the app.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::Args;
use labdash_core::{ConfigError, DashboardConfig};
use labdash_ehr::{CacheError, ClientError, DiskCache, EhrClient, EhrEndpoint};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::api::{router, AppState};

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Band and concept configuration (TOML or JSON).
    #[arg(long, env = "LABDASH_CONFIG")]
    pub config: PathBuf,
    #[arg(long, env = "LABDASH_BIND", default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Base url of the EHR, e.g. http://host:8080/openmrs. Falls back to `ehr_base_url` in the config.
    #[arg(long, env = "LABDASH_EHR_URL")]
    pub ehr_url: Option<String>,
    #[arg(long, env = "LABDASH_CACHE_DIR", default_value = "labdash-cache")]
    pub cache_dir: PathBuf,
    /// Directory of built web UI assets to serve at `/`.
    #[arg(long)]
    pub serve_ui: Option<PathBuf>,
    /// EHR user for basic auth; the password is read from LABDASH_EHR_PASSWORD.
    #[arg(long, env = "LABDASH_EHR_USER")]
    pub ehr_user: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub ehr_timeout_secs: u64,
}

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("{path}: {source}", path = path.display())]
    Config {
        path: PathBuf,
        #[source]
        source: ConfigError,
    },
    #[error("ehr_url is not set: pass --ehr-url, set LABDASH_EHR_URL, or set ehr_base_url in the config")]
    MissingEhrUrl,
    #[error("invalid ehr_url `{url}`: {source}")]
    InvalidEhrUrl {
        url: String,
        #[source]
        source: ClientError,
    },
    #[error("ehr_timeout_secs must be at least 1")]
    InvalidTimeout,
    #[error("LABDASH_EHR_PASSWORD must be set when --ehr-user is given")]
    MissingPassword,
    #[error("cannot open cache dir: {0}")]
    Cache(#[from] CacheError),
    #[error("invalid bind address `{addr}`: {message}")]
    BindAddress { addr: String, message: String },
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
}

/// Everything needed to serve, resolved and validated.
pub struct Prepared {
    pub config: Arc<DashboardConfig>,
    pub client: EhrClient,
    pub bind: SocketAddr,
    pub ui_dir: Option<PathBuf>,
}

pub fn prepare(args: &ServeArgs, password: Option<String>) -> Result<Prepared, StartupError> {
    let config = DashboardConfig::load(&args.config).map_err(|source| StartupError::Config {
        path: args.config.clone(),
        source,
    })?;
    let bind: SocketAddr = args.bind.parse().map_err(|e: std::net::AddrParseError| StartupError::BindAddress {
        addr: args.bind.clone(),
        message: e.to_string(),
    })?;
    let url = args
        .ehr_url
        .clone()
        .or_else(|| config.ehr_base_url().map(str::to_owned))
        .filter(|u| !u.trim().is_empty())
        .ok_or(StartupError::MissingEhrUrl)?;
    let mut endpoint = EhrEndpoint::new(&url).map_err(|source| StartupError::InvalidEhrUrl {
        url: url.clone(),
        source,
    })?;
    if args.ehr_timeout_secs == 0 {
        return Err(StartupError::InvalidTimeout);
    }
    endpoint = endpoint
        .with_timeout(Duration::from_secs(args.ehr_timeout_secs))
        .map_err(|_| StartupError::InvalidTimeout)?;
    if let Some(user) = &args.ehr_user {
        let password = password.ok_or(StartupError::MissingPassword)?;
        endpoint = endpoint.with_auth(user.clone(), password);
    }
    let cache = Arc::new(DiskCache::open(&args.cache_dir)?);
    let config = Arc::new(config);
    let client = EhrClient::new(endpoint, cache, config.clone()).map_err(|source| StartupError::InvalidEhrUrl {
        url,
        source,
    })?;
    Ok(Prepared {
        config,
        client,
        bind,
        ui_dir: args.serve_ui.clone(),
    })
}

/// A running API server. Dropping it stops the server.
pub struct Server {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<std::io::Result<()>>>,
}

impl Server {
    pub async fn start(prepared: Prepared) -> Result<Self, StartupError> {
        let listener = TcpListener::bind(prepared.bind).await.map_err(|source| StartupError::Bind {
            addr: prepared.bind,
            source,
        })?;
        let addr = listener.local_addr().map_err(|source| StartupError::Bind {
            addr: prepared.bind,
            source,
        })?;
        let app = router(
            AppState {
                config: prepared.config,
                client: prepared.client,
            },
            prepared.ui_dir,
        );
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        });
        Ok(Server {
            addr,
            shutdown: Some(tx),
            task: Some(task),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.task.take() {
            Some(task) => task.await.map_err(std::io::Error::other)?,
            None => Ok(()),
        }
    }

    /// Serve until the process receives Ctrl-C.
    pub async fn run_until_ctrl_c(self) -> std::io::Result<()> {
        tokio::signal::ctrl_c().await?;
        self.shutdown().await
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}
