//! Calibration primitives for multi-class classifiers and a small trainer
//! that exercises them.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the scalar to `f64`, which is what the rest of the
//! workspace uses.

pub mod adafocal;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod prob;
pub mod reliability;
pub mod scalar;
pub mod sum;
pub mod temperature;
pub mod trainer;

pub use adafocal::{adafocal_step, AdaFocalState};
pub use dataset::{generate_dataset, DatasetError, DatasetSpec, DatasetSplits, LabeledExample};
pub use error::CalibError;
pub use experiment::{
    run_experiment, ExperimentConfig, ExperimentError, ExperimentRun, ExperimentSummary,
    ModelSummary, TemperatureFitRecord, Verdict,
};
pub use loss::{
    bce_loss, bce_loss_grad, cross_entropy, focal_loss, focal_loss_grad, LossConfig, LossKind,
};
pub use prob::{sigmoid, sigmoid_probs, softmax, LogitVector, ProbMode, ProbVector};
pub use reliability::{reliability_bins, CalibrationBin, CalibrationReport};
pub use scalar::Scalar;
pub use temperature::{apply_temperature, fit_temperature, Temperature, TemperatureMode};
pub use trainer::{evaluate, train, EpochRecord, Evaluation, ModelDocument, TrainError, TrainedModel};

pub type LogitVector64 = LogitVector<f64>;
pub type ProbVector64 = ProbVector<f64>;
pub type LossConfig64 = LossConfig<f64>;
pub type CalibrationBin64 = CalibrationBin<f64>;
pub type CalibrationReport64 = CalibrationReport<f64>;
pub type AdaFocalState64 = AdaFocalState<f64>;
pub type Temperature64 = Temperature<f64>;
pub type DatasetSplits64 = DatasetSplits<f64>;
pub type LabeledExample64 = LabeledExample<f64>;
pub type TrainedModel64 = TrainedModel<f64>;
pub type Evaluation64 = Evaluation<f64>;
