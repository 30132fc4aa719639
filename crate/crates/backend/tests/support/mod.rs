#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use smartfridge_sim::{DetectedItem, DetectionEvent, SceneItem, SensorReading};

pub fn minute(n: i64) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap() + Duration::minutes(n)
}

pub fn detection(device: &str, n: i64, classes: &[&str]) -> DetectionEvent {
    let items: Vec<DetectedItem> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| DetectedItem {
            class: c.to_string(),
            confidence: 0.5 + 0.01 * i as f64,
            bbox: [0.1 * i as f64, 0.0, 0.1, 0.2],
        })
        .collect();
    DetectionEvent {
        device_id: device.into(),
        timestamp: minute(n),
        counts: DetectionEvent::grouped_counts(&items),
        scene: items
            .iter()
            .map(|i| SceneItem {
                class: i.class.clone(),
                bbox: i.bbox,
            })
            .collect(),
        items,
    }
}

pub fn reading(device: &str, n: i64, temperature: f64) -> SensorReading {
    SensorReading {
        device_id: device.into(),
        timestamp: minute(n),
        temperature,
        humidity: 55.0,
        temperature_target: 4.0,
        humidity_target: 50.0,
    }
}

pub fn counts(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}
