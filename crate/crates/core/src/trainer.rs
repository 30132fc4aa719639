//! Linear softmax/sigmoid classifier trained by full-batch gradient descent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adafocal::{adafocal_step, AdaFocalState};
use crate::dataset::{DatasetSplits, DatasetSpec, LabeledExample};
use crate::error::CalibError;
use crate::loss::{bce_loss, bce_loss_grad, focal_loss, focal_loss_grad, LossConfig, LossKind};
use crate::prob::{softmax, LogitVector, ProbVector};
use crate::reliability::{reliability_bins, CalibrationReport};
use crate::scalar::Scalar;
use crate::temperature::{apply_temperature, Temperature};

pub const DEFAULT_EPOCHS: usize = 50;
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;
pub const MODEL_FORMAT: &str = "smartfridge-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid training parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: model expects {expected} features, example has {got}")]
    Dimension { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("unsupported model document: {0}")]
    Format(String),
    #[error("model document is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct EpochRecord<F> {
    pub epoch: usize,
    pub train_loss: F,
    pub val_loss: F,
    pub val_accuracy: F,
    pub val_ece: F,
    /// Per-bin focusing parameters after this epoch's update (AdaFocal only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<F>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct TrainedModel<F> {
    /// `K` rows of `D + 1` weights; the last column is the bias.
    pub weights: Vec<Vec<F>>,
    pub loss_config: LossConfig<F>,
    pub curves: Vec<EpochRecord<F>>,
}

impl<F: Scalar> TrainedModel<F> {
    pub fn zeros(n_classes: usize, feature_dim: usize, loss_config: LossConfig<F>) -> Self {
        Self {
            weights: vec![vec![F::zero(); feature_dim + 1]; n_classes],
            loss_config,
            curves: Vec::new(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.first().map_or(0, |w| w.len() - 1)
    }

    pub fn logits(&self, x: &[F]) -> Result<LogitVector<F>, TrainError> {
        if x.len() != self.feature_dim() {
            return Err(TrainError::Dimension {
                expected: self.feature_dim(),
                got: x.len(),
            });
        }
        Ok(LogitVector::new(self.raw_logits(x))?)
    }

    fn raw_logits(&self, x: &[F]) -> Vec<F> {
        self.weights
            .iter()
            .map(|w| {
                let (bias, coef) = w.split_last().expect("weight row has a bias");
                coef.iter().zip(x).fold(*bias, |acc, (&wi, &xi)| acc + wi * xi)
            })
            .collect()
    }

    /// Class probabilities used for predictions and confidences: softmax of
    /// the (optionally temperature-scaled) logits.
    pub fn predict(
        &self,
        x: &[F],
        temperature: Option<&Temperature<F>>,
    ) -> Result<ProbVector<F>, TrainError> {
        let z = self.logits(x)?;
        Ok(match temperature {
            Some(t) => apply_temperature(&z, t)?,
            None => softmax(&z),
        })
    }
}

fn sample_loss<F: Scalar>(
    config: &LossConfig<F>,
    ada: Option<&AdaFocalState<F>>,
    z: &LogitVector<F>,
    y: usize,
    with_grad: bool,
) -> Result<(F, Option<Vec<F>>), CalibError> {
    match config.kind {
        LossKind::Bce => Ok((
            bce_loss(z, y)?,
            with_grad.then(|| bce_loss_grad(z, y)).transpose()?,
        )),
        LossKind::Focal | LossKind::AdaFocal => {
            let gamma = match ada {
                Some(state) => state.gamma_for(softmax(z).values()[y]),
                None => config.gamma,
            };
            Ok((
                focal_loss(z, y, gamma)?,
                with_grad.then(|| focal_loss_grad(z, y, gamma)).transpose()?,
            ))
        }
    }
}

fn check_examples<F: Scalar>(
    model: &TrainedModel<F>,
    examples: &[LabeledExample<F>],
) -> Result<(), TrainError> {
    for ex in examples {
        if ex.x.len() != model.feature_dim() {
            return Err(TrainError::Dimension {
                expected: model.feature_dim(),
                got: ex.x.len(),
            });
        }
        if ex.y >= model.n_classes() {
            return Err(TrainError::Label {
                label: ex.y,
                classes: model.n_classes(),
            });
        }
    }
    Ok(())
}

fn mean_loss<F: Scalar>(
    model: &TrainedModel<F>,
    ada: Option<&AdaFocalState<F>>,
    examples: &[LabeledExample<F>],
) -> Result<F, CalibError> {
    let mut total = F::zero();
    for ex in examples {
        let z = LogitVector::new(model.raw_logits(&ex.x))?;
        total = total + sample_loss(&model.loss_config, ada, &z, ex.y, false)?.0;
    }
    Ok(total / F::from_count(examples.len().max(1)))
}

/// Full-batch gradient descent from zero weights. For AdaFocal the per-bin
/// gammas are updated from the validation reliability report after every
/// epoch, and each training sample uses the gamma of the bin holding its
/// current true-class probability.
pub fn train<F: Scalar>(
    data: &DatasetSplits<F>,
    loss_config: &LossConfig<F>,
    epochs: usize,
    lr: F,
) -> Result<TrainedModel<F>, TrainError> {
    loss_config.validate()?;
    if epochs == 0 {
        return Err(TrainError::InvalidParams("epochs must be >= 1".into()));
    }
    if !(lr.is_finite() && lr > F::zero()) {
        return Err(TrainError::InvalidParams(format!("learning rate {lr}")));
    }
    if data.train.is_empty() || data.val.is_empty() {
        return Err(TrainError::InvalidParams(
            "train and validation splits must be non-empty".into(),
        ));
    }
    let spec = &data.spec;
    let mut model = TrainedModel::zeros(spec.n_classes(), spec.feature_dim, loss_config.clone());
    check_examples(&model, &data.train)?;
    check_examples(&model, &data.val)?;

    let mut ada = match loss_config.kind {
        LossKind::AdaFocal => Some(AdaFocalState::new(
            loss_config.n_bins,
            loss_config.gamma,
            loss_config.lambda,
            loss_config.gamma_clamp,
        )?),
        _ => None,
    };
    let k = spec.n_classes();
    let cols = spec.feature_dim + 1;
    let n = F::from_count(data.train.len());

    for epoch in 1..=epochs {
        let mut grad = vec![vec![F::zero(); cols]; k];
        let mut total = F::zero();
        for ex in &data.train {
            let z = LogitVector::new(model.raw_logits(&ex.x))
                .map_err(|_| diverged(epoch, f64::NAN))?;
            let (loss, g) = sample_loss(loss_config, ada.as_ref(), &z, ex.y, true)?;
            total = total + loss;
            for (row, &gc) in grad.iter_mut().zip(g.iter().flatten()) {
                for (acc, &xi) in row.iter_mut().zip(&ex.x) {
                    *acc = *acc + gc * xi;
                }
                row[cols - 1] = row[cols - 1] + gc;
            }
        }
        let train_loss = total / n;
        if !train_loss.is_finite() {
            return Err(diverged(epoch, train_loss.as_f64()));
        }
        for (w_row, g_row) in model.weights.iter_mut().zip(&grad) {
            for (w, &g) in w_row.iter_mut().zip(g_row) {
                *w = *w - lr * g / n;
            }
        }
        if model.weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(diverged(epoch, f64::NAN));
        }

        let val_loss = mean_loss(&model, ada.as_ref(), &data.val)
            .map_err(|_| diverged(epoch, f64::NAN))?;
        if !val_loss.is_finite() {
            return Err(diverged(epoch, val_loss.as_f64()));
        }
        let report = evaluate(&model, &data.val, None)?.report;
        if let Some(state) = ada.as_mut() {
            *state = adafocal_step(state, &report)?;
        }
        model.curves.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy: report.accuracy(),
            val_ece: report.ece,
            gammas: ada.as_ref().map(|s| s.gammas.clone()),
        });
    }
    Ok(model)
}

fn diverged(epoch: usize, loss: f64) -> TrainError {
    TrainError::Diverged { epoch, loss }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Evaluation<F> {
    pub logits: Vec<LogitVector<F>>,
    pub labels: Vec<usize>,
    pub accuracy: F,
    pub mean_confidence: F,
    pub report: CalibrationReport<F>,
}

impl<F: Scalar> Evaluation<F> {
    /// `mean_confidence - accuracy`; negative means under-confident.
    pub fn confidence_gap(&self) -> F {
        self.mean_confidence - self.accuracy
    }
}

/// Logits, accuracy and reliability report of `model` on `examples`, with
/// `loss_config.n_bins` bins.
pub fn evaluate<F: Scalar>(
    model: &TrainedModel<F>,
    examples: &[LabeledExample<F>],
    temperature: Option<&Temperature<F>>,
) -> Result<Evaluation<F>, TrainError> {
    if examples.is_empty() {
        return Err(CalibError::EmptyInput.into());
    }
    check_examples(model, examples)?;
    let mut logits = Vec::with_capacity(examples.len());
    let mut confidences = Vec::with_capacity(examples.len());
    let mut correct = Vec::with_capacity(examples.len());
    for ex in examples {
        let z = model.logits(&ex.x)?;
        let p = match temperature {
            Some(t) => apply_temperature(&z, t)?,
            None => softmax(&z),
        };
        confidences.push(p.confidence());
        correct.push(p.argmax() == ex.y);
        logits.push(z);
    }
    let report = reliability_bins(&confidences, &correct, model.loss_config.n_bins)?;
    Ok(Evaluation {
        labels: examples.iter().map(|e| e.y).collect(),
        accuracy: report.accuracy(),
        mean_confidence: report.mean_confidence(),
        logits,
        report,
    })
}

/// Versioned on-disk form of a trained model, carrying everything a device
/// simulator needs to synthesise features and classify them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub dataset: DatasetSpec,
    pub model: TrainedModel<f64>,
}

impl ModelDocument {
    pub fn new(dataset: DatasetSpec, model: TrainedModel<f64>, epochs: usize, lr: f64) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            seed: dataset.seed,
            epochs,
            learning_rate: lr,
            dataset,
            model,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model document serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let doc: Self = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(TrainError::Format(format!(
                "{} v{} (expected {MODEL_FORMAT} v{MODEL_VERSION})",
                doc.format, doc.version
            )));
        }
        doc.dataset
            .validate()
            .map_err(|e| TrainError::Format(e.to_string()))?;
        if doc.model.n_classes() != doc.dataset.n_classes()
            || doc.model.feature_dim() != doc.dataset.feature_dim
        {
            return Err(TrainError::Format(
                "model shape does not match its dataset spec".into(),
            ));
        }
        Ok(doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_dataset;

    fn small_spec() -> DatasetSpec {
        DatasetSpec {
            n_train: 300,
            n_val: 150,
            n_test: 150,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn zero_weights_give_uniform_confidence() {
        let data = generate_dataset::<f64>(&small_spec()).unwrap();
        let model = TrainedModel::zeros(5, 8, LossConfig::bce());
        let eval = evaluate(&model, &data.test, None).unwrap();
        assert_eq!(eval.mean_confidence, 0.2);
        let bin = eval.report.bins.iter().find(|b| b.count > 0).unwrap();
        assert_eq!(bin.count, data.test.len());
        assert_eq!(bin.avg_confidence, Some(0.2));
    }

    #[test]
    fn rejects_bad_parameters() {
        let data = generate_dataset::<f64>(&small_spec()).unwrap();
        assert!(train(&data, &LossConfig::bce(), 0, 0.1).is_err());
        assert!(train(&data, &LossConfig::bce(), 1, 0.0).is_err());
        assert!(train(&data, &LossConfig::focal(-1.0), 1, 0.1).is_err());
    }

    #[test]
    fn huge_learning_rate_reports_divergence_epoch() {
        let data = generate_dataset::<f64>(&small_spec()).unwrap();
        match train(&data, &LossConfig::focal(2.0), 50, f64::MAX) {
            Err(TrainError::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let model = TrainedModel::<f64>::zeros(3, 4, LossConfig::bce());
        let ex = LabeledExample {
            x: vec![0.0; 3],
            y: 0,
        };
        assert!(matches!(
            evaluate(&model, &[ex], None),
            Err(TrainError::Dimension { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn model_document_round_trip() {
        let spec = small_spec();
        let data = generate_dataset::<f64>(&spec).unwrap();
        let model = train(&data, &LossConfig::focal(2.0), 3, 0.1).unwrap();
        let doc = ModelDocument::new(spec, model, 3, 0.1);
        let parsed = ModelDocument::from_json(&doc.to_json()).unwrap();
        assert_eq!(parsed, doc);
        let tampered = doc.to_json().replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(
            ModelDocument::from_json(&tampered),
            Err(TrainError::Format(_))
        ));
    }
}
