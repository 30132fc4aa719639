//! Validation of device messages and the broker subscription loop.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use smartfridge_broker::{Client, ClientError};
use smartfridge_sim::messages::{bbox_in_unit_square, HUMIDITY_MAX, HUMIDITY_MIN};
use smartfridge_sim::{DetectionEvent, SensorReading};
use tokio::sync::watch;
use tracing::{debug, info, warn};

use crate::store::{Inserted, Store, StoreError};

pub const DETECTIONS_FILTER: &str = "fridge/+/detections";
pub const ENV_FILTER: &str = "fridge/+/env";

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("SCHEMA_VIOLATION: {0}")]
    SchemaViolation(String),
    #[error("UNKNOWN_TOPIC: {0}")]
    UnknownTopic(String),
    #[error("OUT_OF_ORDER: {0}")]
    OutOfOrder(String),
    #[error("store: {0}")]
    Store(StoreError),
}

impl IngestError {
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::SchemaViolation(_) => "SCHEMA_VIOLATION",
            IngestError::UnknownTopic(_) => "UNKNOWN_TOPIC",
            IngestError::OutOfOrder(_) => "OUT_OF_ORDER",
            IngestError::Store(_) => "STORE",
        }
    }
}

impl From<StoreError> for IngestError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::OutOfOrder { .. } => IngestError::OutOfOrder(e.to_string()),
            other => IngestError::Store(other),
        }
    }
}

fn schema(msg: impl Into<String>) -> IngestError {
    IngestError::SchemaViolation(msg.into())
}

enum Kind {
    Detections,
    Env,
}

fn parse_topic(topic: &str) -> Result<(&str, Kind), IngestError> {
    let unknown = || IngestError::UnknownTopic(topic.to_owned());
    let mut parts = topic.split('/');
    let (Some("fridge"), Some(device), Some(kind), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(unknown());
    };
    if device.is_empty() {
        return Err(unknown());
    }
    match kind {
        "detections" => Ok((device, Kind::Detections)),
        "env" => Ok((device, Kind::Env)),
        _ => Err(unknown()),
    }
}

pub fn validate_detection(device: &str, ev: &DetectionEvent) -> Result<(), IngestError> {
    if ev.device_id != device {
        return Err(schema(format!("deviceId {:?} on topic of {device:?}", ev.device_id)));
    }
    for item in &ev.items {
        if !(item.confidence.is_finite() && (0.0..=1.0).contains(&item.confidence)) {
            return Err(schema(format!("confidence {} outside [0, 1]", item.confidence)));
        }
        if !bbox_in_unit_square(&item.bbox) {
            return Err(schema(format!("bbox {:?} outside the unit square", item.bbox)));
        }
    }
    if ev.scene.iter().any(|s| !bbox_in_unit_square(&s.bbox)) {
        return Err(schema("scene bbox outside the unit square"));
    }
    if !ev.is_self_consistent() {
        return Err(schema("counts do not match items"));
    }
    Ok(())
}

pub fn validate_reading(device: &str, r: &SensorReading) -> Result<(), IngestError> {
    if r.device_id != device {
        return Err(schema(format!("deviceId {:?} on topic of {device:?}", r.device_id)));
    }
    let finite = [r.temperature, r.humidity, r.temperature_target, r.humidity_target]
        .iter()
        .all(|v| v.is_finite());
    if !finite {
        return Err(schema("non-finite sensor value"));
    }
    if !(HUMIDITY_MIN..=HUMIDITY_MAX).contains(&r.humidity) {
        return Err(schema(format!("humidity {} outside [0, 100]", r.humidity)));
    }
    Ok(())
}

/// Parses, validates and stores one message. Nothing is stored on error.
pub fn ingest(store: &Store, topic: &str, body: &[u8]) -> Result<Inserted, IngestError> {
    let (device, kind) = parse_topic(topic)?;
    match kind {
        Kind::Detections => {
            let ev: DetectionEvent =
                serde_json::from_slice(body).map_err(|e| schema(e.to_string()))?;
            validate_detection(device, &ev)?;
            Ok(store.insert_detection(&ev)?)
        }
        Kind::Env => {
            let r: SensorReading = serde_json::from_slice(body).map_err(|e| schema(e.to_string()))?;
            validate_reading(device, &r)?;
            Ok(store.insert_reading(&r)?)
        }
    }
}

#[derive(Debug, Default)]
pub struct IngestStats {
    pub stored: AtomicU64,
    pub duplicates: AtomicU64,
    pub rejected: AtomicU64,
}

impl IngestStats {
    pub fn record(&self, result: &Result<Inserted, IngestError>) {
        let counter = match result {
            Ok(Inserted::New(_)) => &self.stored,
            Ok(Inserted::Duplicate(_)) => &self.duplicates,
            Err(_) => &self.rejected,
        };
        counter.fetch_add(1, Ordering::Relaxed);
    }
}

async fn subscribe(broker: SocketAddr, client_id: &str) -> Result<Client, ClientError> {
    let mut client = Client::connect(broker, client_id).await?;
    client.subscribe(DETECTIONS_FILTER).await?;
    client.subscribe(ENV_FILTER).await?;
    client.keep_alive(Duration::from_secs(20));
    Ok(client)
}

/// Subscribes to device telemetry and stores everything that arrives,
/// reconnecting when the broker goes away. `ready` flips to true after the
/// first successful subscription.
pub async fn run_ingest(
    broker: SocketAddr,
    client_id: String,
    store: Arc<Store>,
    stats: Arc<IngestStats>,
    ready: watch::Sender<bool>,
) {
    loop {
        let mut client = match subscribe(broker, &client_id).await {
            Ok(c) => c,
            Err(e) => {
                warn!(error = %e, %broker, "broker subscription failed, retrying");
                tokio::time::sleep(Duration::from_millis(500)).await;
                continue;
            }
        };
        info!(%broker, "subscribed to device telemetry");
        let _ = ready.send(true);
        while let Some(msg) = client.recv().await {
            let result = ingest(&store, msg.topic.as_str(), &msg.body);
            stats.record(&result);
            match result {
                Ok(inserted) => debug!(topic = msg.topic.as_str(), ids = ?inserted.ids(), "ingested"),
                Err(e) => warn!(topic = msg.topic.as_str(), code = e.code(), error = %e, "message dropped"),
            }
        }
        warn!("broker connection lost, reconnecting");
        tokio::time::sleep(Duration::from_millis(200)).await;
    }
}
