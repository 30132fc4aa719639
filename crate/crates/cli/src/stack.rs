//! Broker, backend and simulated devices hosted in one process.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use smartfridge_backend::{BackendConfig, BackendHandle};
use smartfridge_broker::{BrokerConfig, BrokerHandle};
use smartfridge_core::{DatasetSpec, ModelDocument, TemperatureFitRecord};
use smartfridge_sim::{default_model, run_device, DeviceConfig, DeviceModel, DeviceSummary, RunnerConfig};
use tokio::task::JoinSet;

/// Loads a model document (and optionally a temperature fit) from disk, or
/// trains the default focal model for `seed`.
pub fn load_device_model(
    model: Option<&Path>,
    temperature: Option<&Path>,
    seed: u64,
) -> Result<DeviceModel> {
    let mut dm = match model {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let doc = ModelDocument::from_json(&text)
                .with_context(|| format!("loading {}", path.display()))?;
            DeviceModel {
                spec: doc.dataset,
                model: doc.model,
                temperature: None,
            }
        }
        None => default_model(seed)?,
    };
    if let Some(path) = temperature {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let rec: TemperatureFitRecord = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        dm.temperature = Some(rec.temperature()?);
    }
    Ok(dm)
}

#[derive(Debug, Clone)]
pub struct FleetConfig {
    pub devices: usize,
    pub device_prefix: String,
    pub seed: u64,
    pub minutes: Option<u64>,
    pub cadence_secs: f64,
    pub acceleration: f64,
}

impl FleetConfig {
    pub fn device_id(&self, i: usize) -> String {
        format!("{}{}", self.device_prefix, i + 1)
    }

    fn runner(&self, i: usize, spec: &DatasetSpec) -> RunnerConfig {
        let mut device = DeviceConfig::new(self.device_id(i), self.seed.wrapping_add(i as u64), spec);
        device.class_names = spec.class_names.clone();
        let mut rc = RunnerConfig::new(device);
        rc.minutes = self.minutes;
        rc.cadence_secs = self.cadence_secs;
        rc.acceleration = self.acceleration;
        rc
    }
}

/// Starts one runner task per device against `broker`.
pub fn spawn_fleet(
    broker: SocketAddr,
    fleet: &FleetConfig,
    model: Arc<DeviceModel>,
) -> JoinSet<Result<DeviceSummary>> {
    let mut set = JoinSet::new();
    for i in 0..fleet.devices {
        let rc = fleet.runner(i, &model.spec);
        let model = Arc::clone(&model);
        set.spawn(async move { Ok(run_device(broker, rc, &model).await?) });
    }
    set
}

/// Waits for every device; results are sorted by device id.
pub async fn join_fleet(mut set: JoinSet<Result<DeviceSummary>>) -> Result<Vec<DeviceSummary>> {
    let mut out = Vec::new();
    while let Some(joined) = set.join_next().await {
        out.push(joined.context("device task panicked")??);
    }
    out.sort_by(|a, b| a.device_id.cmp(&b.device_id));
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct StackConfig {
    pub broker_listen: SocketAddr,
    pub broker: BrokerConfig,
    pub http_listen: SocketAddr,
    pub data_dir: PathBuf,
    pub recipes: PathBuf,
    pub reports_dir: Option<PathBuf>,
    pub sync_writes: bool,
    pub fleet: FleetConfig,
}

pub struct Stack {
    pub broker: BrokerHandle,
    pub backend: BackendHandle,
    fleet: Option<JoinSet<Result<DeviceSummary>>>,
}

impl Stack {
    pub async fn start(config: StackConfig, model: DeviceModel) -> Result<Self> {
        let broker = smartfridge_broker::spawn(config.broker_listen, config.broker)
            .await
            .with_context(|| format!("binding broker on {}", config.broker_listen))?;
        let mut bc = BackendConfig::new(&config.data_dir, broker.local_addr(), &config.recipes);
        bc.listen = config.http_listen;
        bc.reports_dir = config.reports_dir.clone();
        bc.sync_writes = config.sync_writes;
        let backend = smartfridge_backend::start(bc).await?;
        let fleet = spawn_fleet(broker.local_addr(), &config.fleet, Arc::new(model));
        Ok(Self {
            broker,
            backend,
            fleet: Some(fleet),
        })
    }

    pub fn http_addr(&self) -> SocketAddr {
        self.backend.http_addr()
    }

    pub fn broker_addr(&self) -> SocketAddr {
        self.broker.local_addr()
    }

    /// Waits for the devices to finish, then for the backend to have stored
    /// everything they published.
    pub async fn wait_devices(&mut self) -> Result<Vec<DeviceSummary>> {
        let Some(fleet) = self.fleet.take() else {
            bail!("devices already joined");
        };
        let summaries = join_fleet(fleet).await?;
        let expected: u64 = summaries.iter().map(|s| s.minutes).sum();
        let deadline = tokio::time::Instant::now() + Duration::from_secs(30);
        loop {
            let snap = self.backend.store().snapshot();
            if snap.image_count() as u64 >= expected && snap.fridgestat_count() as u64 >= expected {
                break;
            }
            if tokio::time::Instant::now() > deadline {
                bail!(
                    "backend stored {} images and {} readings, expected {expected}",
                    snap.image_count(),
                    snap.fridgestat_count()
                );
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        Ok(summaries)
    }

    pub async fn shutdown(self) {
        if let Some(mut fleet) = self.fleet {
            fleet.abort_all();
        }
        self.backend.shutdown().await;
        self.broker.shutdown().await;
    }
}
