//! Per-device state: shelf contents, thermal model and detection synthesis.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use smartfridge_core::{DatasetSpec, Temperature64, TrainError, TrainedModel64};

use crate::messages::{
    BBox, DetectedItem, DetectionEvent, SceneItem, SensorReading, Settings, SettingsError,
    HUMIDITY_MAX, HUMIDITY_MIN,
};

pub const SHELF_ROWS: usize = 4;
pub const SHELF_COLUMNS: usize = 6;
const SLOT_MARGIN: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("time step must be positive, got {0} s")]
    InvalidStep(f64),
    #[error("model has {model} classes, device expects {device}")]
    ClassMismatch { model: usize, device: usize },
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error(transparent)]
    Settings(#[from] SettingsError),
    #[error(transparent)]
    Model(#[from] TrainError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceConfig {
    pub device_id: String,
    pub seed: u64,
    pub class_names: Vec<String>,
    /// Relaxation rate toward the setpoint, per minute.
    pub relaxation_per_min: f64,
    pub temp_noise: f64,
    pub humidity_noise: f64,
    pub initial_temp: f64,
    pub initial_humidity: f64,
    pub setpoints: Settings,
    /// Per-minute probability of adding an item, and of removing one.
    pub p_add: f64,
    pub p_remove: f64,
    pub initial_items: usize,
    /// Standard deviation of the synthetic detector features.
    pub feature_noise: f64,
    pub start: DateTime<Utc>,
}

impl DeviceConfig {
    pub fn new(device_id: impl Into<String>, seed: u64, spec: &DatasetSpec) -> Self {
        Self {
            device_id: device_id.into(),
            seed,
            class_names: spec.class_names.clone(),
            relaxation_per_min: 0.1,
            temp_noise: 0.05,
            humidity_noise: 0.2,
            initial_temp: 8.0,
            initial_humidity: 65.0,
            setpoints: Settings::default(),
            p_add: 0.05,
            p_remove: 0.05,
            initial_items: 8,
            feature_noise: spec.noise_sigma,
            start: Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(),
        }
    }
}

/// What one inventory step did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InventoryChange {
    pub added: Option<String>,
    pub removed: Option<String>,
}

impl InventoryChange {
    pub fn mutations(&self) -> usize {
        usize::from(self.added.is_some()) + usize::from(self.removed.is_some())
    }
}

#[derive(Debug, Clone)]
pub struct DeviceState {
    pub config: DeviceConfig,
    pub inventory: BTreeMap<String, u32>,
    pub shelf_layout: Vec<SceneItem>,
    pub temp_c: f64,
    pub humidity_pct: f64,
    pub setpoints: Settings,
    pub clock: DateTime<Utc>,
    env_rng: ChaCha8Rng,
    inventory_rng: ChaCha8Rng,
    detection_rng: ChaCha8Rng,
}

fn stream(seed: u64, n: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n);
    rng
}

impl DeviceState {
    pub fn new(config: DeviceConfig) -> Self {
        let mut state = Self {
            inventory: config.class_names.iter().map(|c| (c.clone(), 0)).collect(),
            shelf_layout: Vec::new(),
            temp_c: config.initial_temp,
            humidity_pct: config.initial_humidity.clamp(HUMIDITY_MIN, HUMIDITY_MAX),
            setpoints: config.setpoints,
            clock: config.start,
            env_rng: stream(config.seed, 0),
            inventory_rng: stream(config.seed, 1),
            detection_rng: stream(config.seed, 2),
            config,
        };
        for _ in 0..state.config.initial_items {
            let class = state.random_class();
            state.add_item(class);
        }
        state
    }

    pub fn device_id(&self) -> &str {
        &self.config.device_id
    }

    pub fn item_count(&self) -> usize {
        self.shelf_layout.len()
    }

    fn random_class(&mut self) -> String {
        let i = self.inventory_rng.random_range(0..self.config.class_names.len());
        self.config.class_names[i].clone()
    }

    fn slot_bbox(slot: usize) -> BBox {
        let w = 1.0 / SHELF_COLUMNS as f64;
        let h = 1.0 / SHELF_ROWS as f64;
        let (row, col) = (slot / SHELF_COLUMNS, slot % SHELF_COLUMNS);
        [
            col as f64 * w + SLOT_MARGIN,
            row as f64 * h + SLOT_MARGIN,
            w - 2.0 * SLOT_MARGIN,
            h - 2.0 * SLOT_MARGIN,
        ]
    }

    /// First free grid slot; once the grid is full, a random spot that may
    /// overlap existing items.
    fn place(&mut self) -> BBox {
        for slot in 0..SHELF_ROWS * SHELF_COLUMNS {
            let b = Self::slot_bbox(slot);
            if !self.shelf_layout.iter().any(|s| s.bbox == b) {
                return b;
            }
        }
        let [_, _, w, h] = Self::slot_bbox(0);
        let x = self.inventory_rng.random_range(0.0..=1.0 - w);
        let y = self.inventory_rng.random_range(0.0..=1.0 - h);
        [x, y, w, h]
    }

    /// Adds one item of `class`.
    pub fn add_item(&mut self, class: String) {
        let bbox = self.place();
        *self.inventory.entry(class.clone()).or_insert(0) += 1;
        self.shelf_layout.push(SceneItem { class, bbox });
    }

    /// Removes the item at `index` of the shelf layout.
    pub fn remove_item(&mut self, index: usize) -> Option<String> {
        if index >= self.shelf_layout.len() {
            return None;
        }
        let item = self.shelf_layout.remove(index);
        if let Some(n) = self.inventory.get_mut(&item.class) {
            *n -= 1;
        }
        Some(item.class)
    }

    /// One minute of shopping and eating: an independent chance to add an
    /// item of a random class and to take out a random item.
    pub fn step_inventory(&mut self) -> InventoryChange {
        let mut change = InventoryChange::default();
        if self.inventory_rng.random_bool(self.config.p_add) {
            let class = self.random_class();
            self.add_item(class.clone());
            change.added = Some(class);
        }
        if self.inventory_rng.random_bool(self.config.p_remove) && !self.shelf_layout.is_empty() {
            let i = self.inventory_rng.random_range(0..self.shelf_layout.len());
            change.removed = self.remove_item(i);
        }
        change
    }

    /// Relaxes temperature and humidity toward the setpoints over `dt_secs`
    /// and advances the clock.
    pub fn step_env(&mut self, dt_secs: f64) -> Result<SensorReading, SimError> {
        if !(dt_secs.is_finite() && dt_secs > 0.0) {
            return Err(SimError::InvalidStep(dt_secs));
        }
        let dt_min = dt_secs / 60.0;
        let k = self.config.relaxation_per_min;
        let e_t: f64 = self.env_rng.sample(StandardNormal);
        let e_h: f64 = self.env_rng.sample(StandardNormal);
        self.temp_c += k * (self.setpoints.temperature_target - self.temp_c) * dt_min
            + self.config.temp_noise * e_t;
        self.humidity_pct = (self.humidity_pct
            + k * (self.setpoints.humidity_target - self.humidity_pct) * dt_min
            + self.config.humidity_noise * e_h)
            .clamp(HUMIDITY_MIN, HUMIDITY_MAX);
        self.clock += Duration::milliseconds((dt_secs * 1000.0).round() as i64);
        Ok(self.reading())
    }

    /// Current sensor values at the current clock.
    pub fn reading(&self) -> SensorReading {
        SensorReading {
            device_id: self.config.device_id.clone(),
            timestamp: self.clock,
            temperature: self.temp_c,
            humidity: self.humidity_pct,
            temperature_target: self.setpoints.temperature_target,
            humidity_target: self.setpoints.humidity_target,
        }
    }

    /// Runs the classifier over every shelf item. Counts come from the
    /// predicted classes, so a misclassification shows up as a miscount.
    pub fn emit_detection(
        &mut self,
        model: &TrainedModel64,
        spec: &DatasetSpec,
        temperature: Option<&Temperature64>,
    ) -> Result<DetectionEvent, SimError> {
        let device_classes = self.config.class_names.len();
        if model.n_classes() != device_classes || spec.class_names != self.config.class_names {
            return Err(SimError::ClassMismatch {
                model: model.n_classes(),
                device: device_classes,
            });
        }
        let mut items = Vec::with_capacity(self.shelf_layout.len());
        for scene_item in &self.shelf_layout {
            let class = spec
                .class_index(&scene_item.class)
                .ok_or_else(|| SimError::UnknownClass(scene_item.class.clone()))?;
            let x: Vec<f64> =
                spec.sample_features(class, self.config.feature_noise, &mut self.detection_rng);
            let probs = model.predict(&x, temperature)?;
            items.push(DetectedItem {
                class: spec.class_names[probs.argmax()].clone(),
                confidence: probs.confidence(),
                bbox: scene_item.bbox,
            });
        }
        Ok(DetectionEvent {
            device_id: self.config.device_id.clone(),
            timestamp: self.clock,
            counts: DetectionEvent::grouped_counts(&items),
            items,
            scene: self.shelf_layout.clone(),
        })
    }

    /// Replaces the setpoints; out-of-range values leave the state untouched.
    /// Returns whether anything changed.
    pub fn apply_settings(&mut self, settings: &Settings) -> Result<bool, SimError> {
        settings.validate()?;
        let changed = self.setpoints != *settings;
        self.setpoints = *settings;
        Ok(changed)
    }

    /// One reporting period of `dt_secs`: inventory, then environment, then
    /// a detection pass at the new clock.
    pub fn tick(
        &mut self,
        dt_secs: f64,
        model: &TrainedModel64,
        spec: &DatasetSpec,
        temperature: Option<&Temperature64>,
    ) -> Result<(DetectionEvent, SensorReading), SimError> {
        self.step_inventory();
        let reading = self.step_env(dt_secs)?;
        let detection = self.emit_detection(model, spec, temperature)?;
        Ok((detection, reading))
    }
}
