//! The three-way loss comparison: BCE, focal (gamma 2) and AdaFocal trained
//! on one shared dataset, evaluated on the test split, plus a temperature fit
//! for the focal model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{generate_dataset, DatasetError, DatasetSpec};
use crate::loss::{LossConfig, LossKind};
use crate::reliability::CalibrationReport;
use crate::temperature::{fit_temperature, mean_nll, TemperatureMode};
use crate::trainer::{evaluate, train, Evaluation, ModelDocument, TrainError, TrainedModel};

pub const SUMMARY_FORMAT: &str = "smartfridge-experiment";
pub const SUMMARY_VERSION: u32 = 1;
pub const FOCAL_GAMMA: f64 = 2.0;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl From<crate::CalibError> for ExperimentError {
    fn from(e: crate::CalibError) -> Self {
        Self::Train(e.into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl ExperimentConfig {
    pub fn new(seed: u64, epochs: usize) -> Self {
        Self {
            dataset: DatasetSpec {
                seed,
                ..DatasetSpec::default()
            },
            epochs,
            learning_rate: crate::trainer::DEFAULT_LEARNING_RATE,
        }
    }
}

/// Loss configurations compared, keyed by the short name used in file names.
pub fn experiment_losses() -> [(&'static str, LossConfig<f64>); 3] {
    [
        ("bce", LossConfig::bce()),
        ("focal", LossConfig::focal(FOCAL_GAMMA)),
        ("adafocal", LossConfig::adafocal()),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub loss: LossKind,
    pub accuracy: f64,
    pub mean_confidence: f64,
    /// `mean_confidence - accuracy`.
    pub confidence_gap: f64,
    pub ece: f64,
    pub mce: f64,
    pub oce: f64,
    pub uce: f64,
    pub report: CalibrationReport<f64>,
}

impl ModelSummary {
    fn new(loss: LossKind, eval: &Evaluation<f64>) -> Self {
        Self {
            loss,
            accuracy: eval.accuracy,
            mean_confidence: eval.mean_confidence,
            confidence_gap: eval.confidence_gap(),
            ece: eval.report.ece,
            mce: eval.report.mce,
            oce: eval.report.oce,
            uce: eval.report.uce,
            report: eval.report.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFitRecord {
    pub model: String,
    pub mode: TemperatureMode,
    pub values: Vec<f64>,
    pub val_nll_before: f64,
    pub val_nll_after: f64,
    pub test_ece_before: f64,
    pub test_ece_after: f64,
    /// `(before - after) / before`.
    pub test_ece_reduction: f64,
    pub report_after: CalibrationReport<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub focal_underconfident: bool,
    pub adafocal_underconfident: bool,
    pub bce_gap_smaller_than_focal: bool,
    /// All three of the above.
    pub holds: bool,
}

impl Verdict {
    pub fn from_models(models: &BTreeMap<String, ModelSummary>) -> Self {
        let under = |name: &str| models[name].mean_confidence < models[name].accuracy;
        let focal_underconfident = under("focal");
        let adafocal_underconfident = under("adafocal");
        let bce_gap_smaller_than_focal =
            models["bce"].confidence_gap.abs() < models["focal"].confidence_gap.abs();
        Self {
            focal_underconfident,
            adafocal_underconfident,
            bce_gap_smaller_than_focal,
            holds: focal_underconfident && adafocal_underconfident && bce_gap_smaller_than_focal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub n_test: usize,
    pub models: BTreeMap<String, ModelSummary>,
    pub temperature: TemperatureFitRecord,
    pub verdict: Verdict,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    /// Trained models in `experiment_losses` order.
    pub models: Vec<(String, ModelDocument)>,
    pub summary: ExperimentSummary,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentRun, ExperimentError> {
    let data = generate_dataset::<f64>(&config.dataset)?;
    let mut models = Vec::new();
    let mut summaries = BTreeMap::new();
    let mut focal: Option<(TrainedModel<f64>, Evaluation<f64>)> = None;
    for (name, loss) in experiment_losses() {
        let model = train(&data, &loss, config.epochs, config.learning_rate)?;
        let eval = evaluate(&model, &data.test, None)?;
        summaries.insert(name.to_string(), ModelSummary::new(loss.kind, &eval));
        if loss.kind == LossKind::Focal {
            focal = Some((model.clone(), eval));
        }
        models.push((
            name.to_string(),
            ModelDocument::new(data.spec.clone(), model, config.epochs, config.learning_rate),
        ));
    }

    let (focal_model, focal_eval) = focal.expect("focal is always trained");
    let val = evaluate(&focal_model, &data.val, None)?;
    let t = fit_temperature(&val.logits, &val.labels, TemperatureMode::Scalar)?;
    let after = evaluate(&focal_model, &data.test, Some(&t))?;
    let before_ece = focal_eval.report.ece;
    let temperature = TemperatureFitRecord {
        model: "focal".into(),
        mode: t.mode(),
        values: t.values().to_vec(),
        val_nll_before: mean_nll(&val.logits, &val.labels, &[1.0]),
        val_nll_after: mean_nll(&val.logits, &val.labels, t.values()),
        test_ece_before: before_ece,
        test_ece_after: after.report.ece,
        test_ece_reduction: if before_ece > 0.0 {
            (before_ece - after.report.ece) / before_ece
        } else {
            0.0
        },
        report_after: after.report,
    };

    let verdict = Verdict::from_models(&summaries);
    Ok(ExperimentRun {
        models,
        summary: ExperimentSummary {
            format: SUMMARY_FORMAT.into(),
            version: SUMMARY_VERSION,
            seed: config.dataset.seed,
            epochs: config.epochs,
            learning_rate: config.learning_rate,
            n_test: data.test.len(),
            models: summaries,
            temperature,
            verdict,
        },
    })
}

impl TemperatureFitRecord {
    pub fn temperature(&self) -> Result<crate::Temperature<f64>, crate::CalibError> {
        match self.mode {
            TemperatureMode::Scalar if self.values.len() == 1 => {
                crate::Temperature::scalar(self.values[0])
            }
            TemperatureMode::Scalar => Err(crate::CalibError::LengthMismatch {
                expected: 1,
                got: self.values.len(),
            }),
            TemperatureMode::PerClass => crate::Temperature::per_class(self.values.clone()),
        }
    }
}
