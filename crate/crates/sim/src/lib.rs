//! Simulated smart-fridge devices. Each device keeps a ground-truth shelf,
//! relaxes its temperature and humidity toward operator setpoints, and once
//! per simulated minute publishes a detection event produced by a trained
//! classifier together with a sensor reading.

pub mod device;
pub mod messages;
pub mod runner;

pub use device::{DeviceConfig, DeviceState, InventoryChange, SimError};
pub use messages::{
    detections_topic, env_topic, settings_topic, BBox, DetectedItem, DetectionEvent, SceneItem,
    SensorReading, Settings, SettingsError,
};
pub use runner::{default_model, run_device, DeviceModel, DeviceSummary, RunnerConfig, RunnerError};
