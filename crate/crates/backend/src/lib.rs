//! Backend service: subscribes to device telemetry on the broker, stores it
//! in append-only collections and serves the HTTP API used by the dashboard.

pub mod auth;
pub mod http;
pub mod ingest;
pub mod recipes;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tracing::info;

pub use auth::{Auth, AuthError, DEFAULT_TOKEN_TTL};
pub use http::{router, AppState, SettingsPublisher};
pub use ingest::{ingest, IngestError, IngestStats};
pub use recipes::{load_catalog, suggest_recipes, Catalog, CatalogError, Recipe};
pub use store::{
    Collection, CountRecord, FridgeStatRecord, ImageRecord, Inserted, Record, Snapshot, Store,
    StoreError,
};

pub const DEFAULT_HTTP_PORT: u16 = 8080;
pub const DEFAULT_CLIENT_ID: &str = "smartfridge-backend";
const READY_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub broker: SocketAddr,
    pub recipes: PathBuf,
    pub reports_dir: Option<PathBuf>,
    pub token_ttl: Duration,
    /// Broker client id; the settings publisher uses `{client_id}-settings`.
    pub client_id: String,
    /// `fdatasync` after every append.
    pub sync_writes: bool,
}

impl BackendConfig {
    pub fn new(data_dir: impl Into<PathBuf>, broker: SocketAddr, recipes: impl Into<PathBuf>) -> Self {
        Self {
            listen: SocketAddr::from(([0, 0, 0, 0], DEFAULT_HTTP_PORT)),
            data_dir: data_dir.into(),
            broker,
            recipes: recipes.into(),
            reports_dir: None,
            token_ttl: DEFAULT_TOKEN_TTL,
            client_id: DEFAULT_CLIENT_ID.into(),
            sync_writes: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("binding {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("no broker subscription after {0:?}")]
    BrokerTimeout(Duration),
}

pub struct BackendHandle {
    http_addr: SocketAddr,
    store: Arc<Store>,
    stats: Arc<IngestStats>,
    shutdown: watch::Sender<bool>,
    http: JoinHandle<()>,
    ingest: JoinHandle<()>,
}

impl BackendHandle {
    pub fn http_addr(&self) -> SocketAddr {
        self.http_addr
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn stats(&self) -> &Arc<IngestStats> {
        &self.stats
    }

    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        self.ingest.abort();
        let _ = self.http.await;
    }
}

/// Opens the store, subscribes to the broker and starts serving HTTP. Returns
/// once the telemetry subscription is in place.
pub async fn start(config: BackendConfig) -> Result<BackendHandle, BackendError> {
    let catalog = load_catalog(&config.recipes)?;
    let store = Arc::new(Store::open_with(&config.data_dir, config.sync_writes)?);
    let stats = Arc::new(IngestStats::default());

    let (ready_tx, mut ready) = watch::channel(false);
    let ingest = tokio::spawn(ingest::run_ingest(
        config.broker,
        config.client_id.clone(),
        Arc::clone(&store),
        Arc::clone(&stats),
        ready_tx,
    ));
    let subscribed = tokio::time::timeout(READY_TIMEOUT, ready.wait_for(|r| *r)).await;
    if !matches!(subscribed, Ok(Ok(_))) {
        ingest.abort();
        return Err(BackendError::BrokerTimeout(READY_TIMEOUT));
    }

    let state = Arc::new(AppState {
        store: Arc::clone(&store),
        auth: Auth::new(Arc::clone(&store), config.token_ttl),
        catalog,
        publisher: Some(SettingsPublisher::new(
            config.broker,
            format!("{}-settings", config.client_id),
        )),
        reports_dir: config.reports_dir.clone(),
    });
    let listener = TcpListener::bind(config.listen)
        .await
        .map_err(|source| BackendError::Bind {
            addr: config.listen,
            source,
        })?;
    let http_addr = listener.local_addr().map_err(|source| BackendError::Bind {
        addr: config.listen,
        source,
    })?;
    let (shutdown, mut shutdown_rx) = watch::channel(false);
    let app = router(state);
    let http = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = shutdown_rx.wait_for(|s| *s).await;
            })
            .await;
    });
    info!(%http_addr, data_dir = %config.data_dir.display(), "backend ready");
    Ok(BackendHandle {
        http_addr,
        store,
        stats,
        shutdown,
        http,
        ingest,
    })
}
