//! Drives a device against a live broker at a configurable time acceleration.

use std::net::SocketAddr;
use std::time::Duration;

use smartfridge_broker::{Client, ClientError};
use smartfridge_core::{
    generate_dataset, train, DatasetSpec, LossConfig, Temperature64, TrainError, TrainedModel64,
};
use smartfridge_core::trainer::{DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE};
use smartfridge_wire::{TopicError, TopicName};
use tracing::{debug, info, warn};

use crate::device::{DeviceConfig, DeviceState, SimError};
use crate::messages::{
    detections_topic, env_topic, settings_topic, DetectionEvent, SensorReading, Settings,
};

pub const DEFAULT_KEEPALIVE_INTERVAL: Duration = Duration::from_secs(20);
pub const DEFAULT_CADENCE_SECS: f64 = 60.0;

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Topic(#[from] TopicError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("dataset: {0}")]
    Dataset(#[from] smartfridge_core::DatasetError),
}

/// Classifier a device runs, with the dataset spec used to synthesise its
/// inputs.
#[derive(Debug, Clone)]
pub struct DeviceModel {
    pub spec: DatasetSpec,
    pub model: TrainedModel64,
    pub temperature: Option<Temperature64>,
}

/// Focal-loss (gamma 2) model trained on the default dataset with `seed`.
pub fn default_model(seed: u64) -> Result<DeviceModel, RunnerError> {
    let spec = DatasetSpec {
        seed,
        ..DatasetSpec::default()
    };
    let data = generate_dataset::<f64>(&spec)?;
    let model = train(&data, &LossConfig::focal(2.0), DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE)?;
    Ok(DeviceModel {
        spec,
        model,
        temperature: None,
    })
}

#[derive(Debug, Clone)]
pub struct RunnerConfig {
    pub device: DeviceConfig,
    /// Reporting periods to run; `None` runs until the task is dropped.
    pub minutes: Option<u64>,
    /// Simulated seconds between reports.
    pub cadence_secs: f64,
    /// Simulated seconds per wall-clock second. Infinity runs flat out.
    pub acceleration: f64,
    pub keepalive: Duration,
}

impl RunnerConfig {
    pub fn new(device: DeviceConfig) -> Self {
        Self {
            device,
            minutes: None,
            cadence_secs: DEFAULT_CADENCE_SECS,
            acceleration: 1.0,
            keepalive: DEFAULT_KEEPALIVE_INTERVAL,
        }
    }

    fn tick_period(&self) -> Option<Duration> {
        let secs = self.cadence_secs / self.acceleration;
        (secs.is_finite() && secs > 0.0).then(|| Duration::from_secs_f64(secs))
    }
}

#[derive(Debug, Clone, Default)]
pub struct DeviceSummary {
    pub device_id: String,
    pub minutes: u64,
    pub last_detection: Option<DetectionEvent>,
    pub last_reading: Option<SensorReading>,
    pub settings_applied: usize,
    pub settings_rejected: usize,
}

/// Connects as `device_id`, listens for settings and publishes one detection
/// event and one sensor reading per reporting period.
pub async fn run_device(
    broker: SocketAddr,
    config: RunnerConfig,
    model: &DeviceModel,
) -> Result<DeviceSummary, RunnerError> {
    let id = config.device.device_id.clone();
    let detections = TopicName::new(detections_topic(&id))?;
    let env = TopicName::new(env_topic(&id))?;
    let mut client = Client::connect(broker, &id).await?;
    client.subscribe(&settings_topic(&id)).await?;
    client.keep_alive(config.keepalive);
    info!(device_id = id.as_str(), "device online");

    let mut state = DeviceState::new(config.device.clone());
    let mut summary = DeviceSummary {
        device_id: id.clone(),
        ..DeviceSummary::default()
    };
    let mut ticker = config.tick_period().map(|p| {
        let mut t = tokio::time::interval(p);
        t.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        t
    });
    if let Some(t) = ticker.as_mut() {
        t.tick().await;
    }

    while config.minutes.is_none_or(|m| summary.minutes < m) {
        match ticker.as_mut() {
            Some(t) => {
                t.tick().await;
            }
            None => tokio::task::yield_now().await,
        }
        while let Some(msg) = client.try_recv() {
            match serde_json::from_slice::<Settings>(&msg.body) {
                Ok(s) => match state.apply_settings(&s) {
                    Ok(_) => {
                        summary.settings_applied += 1;
                        info!(device_id = id.as_str(), ?s, "setpoints updated");
                    }
                    Err(e) => {
                        summary.settings_rejected += 1;
                        warn!(device_id = id.as_str(), error = %e, "settings rejected");
                    }
                },
                Err(e) => {
                    summary.settings_rejected += 1;
                    warn!(device_id = id.as_str(), error = %e, "unparsable settings");
                }
            }
        }
        let (detection, reading) =
            state.tick(config.cadence_secs, &model.model, &model.spec, model.temperature.as_ref())?;
        client
            .publish(&detections, serde_json::to_vec(&detection).expect("serialisable"))
            .await?;
        client
            .publish(&env, serde_json::to_vec(&reading).expect("serialisable"))
            .await?;
        debug!(device_id = id.as_str(), minute = summary.minutes, "published");
        summary.minutes += 1;
        summary.last_detection = Some(detection);
        summary.last_reading = Some(reading);
    }

    client.ping().await?;
    client.disconnect().await?;
    info!(device_id = id.as_str(), minutes = summary.minutes, "device finished");
    Ok(summary)
}
