//! HTTP/JSON service for two conversations: personalized prediction with a
//! bundled horizon model, and grid-search training on an uploaded dataset.
//!
//! Each conversation is a server-side state machine ([`session`]); training
//! runs as a background job ([`jobs`]). [`start`] binds and serves until the
//! returned [`Server`] is shut down.

pub mod config;
pub mod error;
pub mod jobs;
pub mod routes;
pub mod session;
pub mod survey;

use std::net::SocketAddr;
use std::time::Duration;

use medagent_core::vault::{ModelRegistry, VaultError};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub use config::ServiceConfig;
pub use error::ApiError;
pub use routes::{router, AppState};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("cannot load models from {dir}: {source}")]
    Registry { dir: String, source: VaultError },
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

pub struct Server {
    pub addr: SocketAddr,
    pub state: AppState,
    shutdown: oneshot::Sender<()>,
    task: JoinHandle<std::io::Result<()>>,
    sweeper: JoinHandle<()>,
}

impl Server {
    pub async fn shutdown(self) -> Result<(), ServeError> {
        let _ = self.shutdown.send(());
        self.sweeper.abort();
        match self.task.await {
            Ok(r) => Ok(r?),
            Err(e) => Err(ServeError::Io(std::io::Error::other(e))),
        }
    }

    /// Serve until the process receives Ctrl-C.
    pub async fn run_until_ctrl_c(self) -> Result<(), ServeError> {
        let _ = tokio::signal::ctrl_c().await;
        tracing::info!("shutting down");
        self.shutdown().await
    }
}

/// Load the model registry, bind `config.listen` and start serving.
pub async fn start(config: ServiceConfig) -> Result<Server, ServeError> {
    config.validate()?;
    let registry = ModelRegistry::open(&config.model_dir).map_err(|source| ServeError::Registry {
        dir: config.model_dir.display().to_string(),
        source,
    })?;
    let listener = tokio::net::TcpListener::bind(&config.listen)
        .await
        .map_err(|source| ServeError::Bind {
            addr: config.listen.clone(),
            source,
        })?;
    let addr = listener.local_addr()?;
    let state = AppState::new(config, registry);
    tracing::info!(%addr, horizons = ?state.registry.horizons(), "listening");

    let sessions = state.sessions.clone();
    let sweeper = tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let removed = sessions.sweep();
            if removed > 0 {
                tracing::debug!(removed, "expired idle sessions");
            }
        }
    });

    let (tx, rx) = oneshot::channel::<()>();
    let app = router(state.clone());
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    Ok(Server {
        addr,
        state,
        shutdown: tx,
        task,
        sweeper,
    })
}
