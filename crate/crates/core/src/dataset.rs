//! Synthetic Gaussian-mixture classification data with imbalanced priors.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub const DEFAULT_CLASS_NAMES: [&str; 5] = [
    "Purple Sweet Potato",
    "Water Spinach",
    "Apple",
    "Beetroot",
    "Spinach",
];
pub const DEFAULT_PRIORS: [f64; 5] = [0.40, 0.25, 0.20, 0.10, 0.05];
pub const DEFAULT_FEATURE_DIM: usize = 8;
/// Offset of each class mean along its own axis, in units of `noise_sigma`.
pub const DEFAULT_MEAN_OFFSET: f64 = 2.5;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("feature dimension must be >= 2, got {0}")]
    FeatureDim(usize),
    #[error("invalid priors: {0}")]
    InvalidPriors(String),
    #[error("class means must be {classes}x{dim} finite values")]
    InvalidMeans { classes: usize, dim: usize },
    #[error("noise sigma must be finite and > 0, got {0}")]
    InvalidNoise(f64),
    #[error("{0} class names for {1} classes")]
    ClassNames(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub class_names: Vec<String>,
    pub class_priors: Vec<f64>,
    pub feature_dim: usize,
    pub class_means: Vec<Vec<f64>>,
    pub noise_sigma: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    /// Five produce classes with priors 0.40/0.25/0.20/0.10/0.05 in 8
    /// dimensions; class `k` has its mean offset along axis `k`.
    fn default() -> Self {
        let k = DEFAULT_CLASS_NAMES.len();
        let class_means = (0..k)
            .map(|c| {
                let mut m = vec![0.0; DEFAULT_FEATURE_DIM];
                m[c] = DEFAULT_MEAN_OFFSET;
                m
            })
            .collect();
        Self {
            class_names: DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            class_priors: DEFAULT_PRIORS.to_vec(),
            feature_dim: DEFAULT_FEATURE_DIM,
            class_means,
            noise_sigma: 1.0,
            n_train: 4000,
            n_val: 2000,
            n_test: 4000,
            seed: 7,
        }
    }
}

impl DatasetSpec {
    pub fn n_classes(&self) -> usize {
        self.class_priors.len()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let k = self.class_priors.len();
        if k < 2 {
            return Err(DatasetError::TooFewClasses(k));
        }
        if self.class_names.len() != k {
            return Err(DatasetError::ClassNames(self.class_names.len(), k));
        }
        if self.feature_dim < 2 {
            return Err(DatasetError::FeatureDim(self.feature_dim));
        }
        if self.class_priors.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(DatasetError::InvalidPriors(
                "priors must be finite and non-negative".into(),
            ));
        }
        let total: f64 = self.class_priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidPriors(format!("priors sum to {total}")));
        }
        if self.class_means.len() != k
            || self
                .class_means
                .iter()
                .any(|m| m.len() != self.feature_dim || m.iter().any(|v| !v.is_finite()))
        {
            return Err(DatasetError::InvalidMeans {
                classes: k,
                dim: self.feature_dim,
            });
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return Err(DatasetError::InvalidNoise(self.noise_sigma));
        }
        Ok(())
    }

    /// True when some class prior is at most half of the largest prior.
    pub fn is_imbalanced(&self) -> bool {
        let max = self.class_priors.iter().copied().fold(0.0, f64::max);
        self.class_priors.iter().any(|&p| p <= max / 2.0)
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    /// Draws a feature vector for `class` with isotropic noise `sigma`.
    pub fn sample_features<F: Scalar, R: Rng + ?Sized>(
        &self,
        class: usize,
        sigma: f64,
        rng: &mut R,
    ) -> Vec<F> {
        self.class_means[class]
            .iter()
            .map(|&m| {
                let e: f64 = rng.sample(StandardNormal);
                F::lit(m + sigma * e)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct LabeledExample<F> {
    pub x: Vec<F>,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct DatasetSplits<F> {
    pub spec: DatasetSpec,
    pub train: Vec<LabeledExample<F>>,
    pub val: Vec<LabeledExample<F>>,
    pub test: Vec<LabeledExample<F>>,
}

/// Samples train/val/test splits from one seeded stream, in that order.
pub fn generate_dataset<F: Scalar>(spec: &DatasetSpec) -> Result<DatasetSplits<F>, DatasetError> {
    spec.validate()?;
    let labels = WeightedIndex::new(&spec.class_priors)
        .map_err(|e| DatasetError::InvalidPriors(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut split = |n: usize| -> Vec<LabeledExample<F>> {
        (0..n)
            .map(|_| {
                let y = labels.sample(&mut rng);
                let x = spec.sample_features(y, spec.noise_sigma, &mut rng);
                LabeledExample { x, y }
            })
            .collect()
    };
    let train = split(spec.n_train);
    let val = split(spec.n_val);
    let test = split(spec.n_test);
    Ok(DatasetSplits {
        spec: spec.clone(),
        train,
        val,
        test,
    })
}
