//! JSON payloads carried in PUBLISH bodies.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub const TEMPERATURE_TARGET_MIN: f64 = -10.0;
pub const TEMPERATURE_TARGET_MAX: f64 = 20.0;
pub const HUMIDITY_MIN: f64 = 0.0;
pub const HUMIDITY_MAX: f64 = 100.0;

/// Normalised `[x, y, w, h]`, top-left origin.
pub type BBox = [f64; 4];

pub fn detections_topic(device_id: &str) -> String {
    format!("fridge/{device_id}/detections")
}

pub fn env_topic(device_id: &str) -> String {
    format!("fridge/{device_id}/env")
}

pub fn settings_topic(device_id: &str) -> String {
    format!("fridge/{device_id}/settings")
}

/// True when all four values are finite and the box lies in the unit square.
pub fn bbox_in_unit_square(b: &BBox) -> bool {
    let [x, y, w, h] = *b;
    b.iter().all(|v| v.is_finite())
        && x >= 0.0
        && y >= 0.0
        && w >= 0.0
        && h >= 0.0
        && x + w <= 1.0
        && y + h <= 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Settings {
    pub temperature_target: f64,
    pub humidity_target: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            temperature_target: 4.0,
            humidity_target: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SettingsError {
    #[error("temperature target {0} outside [{TEMPERATURE_TARGET_MIN}, {TEMPERATURE_TARGET_MAX}]")]
    Temperature(f64),
    #[error("humidity target {0} outside [{HUMIDITY_MIN}, {HUMIDITY_MAX}]")]
    Humidity(f64),
}

impl Settings {
    pub fn validate(&self) -> Result<(), SettingsError> {
        let t = self.temperature_target;
        if !(TEMPERATURE_TARGET_MIN..=TEMPERATURE_TARGET_MAX).contains(&t) {
            return Err(SettingsError::Temperature(t));
        }
        let h = self.humidity_target;
        if !(HUMIDITY_MIN..=HUMIDITY_MAX).contains(&h) {
            return Err(SettingsError::Humidity(h));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DetectedItem {
    pub class: String,
    pub confidence: f64,
    pub bbox: BBox,
}

/// One object on the shelf as the simulator placed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SceneItem {
    pub class: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DetectionEvent {
    pub device_id: String,
    pub timestamp: DateTime<Utc>,
    pub items: Vec<DetectedItem>,
    pub counts: BTreeMap<String, u32>,
    pub scene: Vec<SceneItem>,
}

impl DetectionEvent {
    /// Counts obtained by grouping `items` by class.
    pub fn grouped_counts(items: &[DetectedItem]) -> BTreeMap<String, u32> {
        let mut counts = BTreeMap::new();
        for item in items {
            *counts.entry(item.class.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn is_self_consistent(&self) -> bool {
        self.counts == Self::grouped_counts(&self.items)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SensorReading {
    pub device_id: String,
    pub timestamp: DateTime<Utc>,
    pub temperature: f64,
    pub humidity: f64,
    pub temperature_target: f64,
    pub humidity_target: f64,
}
