//! Focal loss, softmax cross-entropy and one-vs-rest binary cross-entropy,
//! with hand-derived gradients with respect to the logits.

use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::prob::{sigmoid, softmax_slice, LogitVector};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Focal,
    #[serde(rename = "adafocal")]
    AdaFocal,
    Bce,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Focal => "focal",
            LossKind::AdaFocal => "adafocal",
            LossKind::Bce => "bce",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct LossConfig<F> {
    pub kind: LossKind,
    /// Focusing parameter. For `AdaFocal` this is the initial value of every bin.
    pub gamma: F,
    /// Update rate of the adaptive focusing parameter.
    pub lambda: F,
    pub n_bins: usize,
    pub gamma_clamp: (F, F),
}

pub const DEFAULT_N_BINS: usize = 15;
pub const DEFAULT_GAMMA: f64 = 2.0;
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_GAMMA_CLAMP: (f64, f64) = (0.0, 20.0);

impl<F: Scalar> LossConfig<F> {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            gamma: F::lit(DEFAULT_GAMMA),
            lambda: F::lit(DEFAULT_LAMBDA),
            n_bins: DEFAULT_N_BINS,
            gamma_clamp: (F::lit(DEFAULT_GAMMA_CLAMP.0), F::lit(DEFAULT_GAMMA_CLAMP.1)),
        }
    }

    pub fn focal(gamma: F) -> Self {
        Self {
            gamma,
            ..Self::new(LossKind::Focal)
        }
    }

    pub fn adafocal() -> Self {
        Self::new(LossKind::AdaFocal)
    }

    pub fn bce() -> Self {
        Self::new(LossKind::Bce)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.gamma_clamp;
        if !self.gamma.is_finite() || self.gamma < F::zero() {
            return Err(CalibError::InvalidConfig(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if !self.lambda.is_finite() || self.lambda <= F::zero() {
            return Err(CalibError::InvalidConfig(format!(
                "lambda must be finite and > 0, got {}",
                self.lambda
            )));
        }
        if self.n_bins == 0 {
            return Err(CalibError::InvalidConfig("n_bins must be >= 1".into()));
        }
        if !lo.is_finite() || !hi.is_finite() || lo < F::zero() || lo > hi {
            return Err(CalibError::InvalidConfig(format!(
                "gamma clamp [{lo}, {hi}] is not a valid non-negative interval"
            )));
        }
        Ok(())
    }
}

/// Log-probability of `label` and the complement `1 - q_label`, the latter
/// summed from the other classes so it stays accurate when `q_label` is near 1.
fn true_class_terms<F: Scalar>(logits: &LogitVector<F>, label: usize) -> (F, F, Vec<F>) {
    let z = logits.values();
    let log_q = z[label] - logits.log_sum_exp();
    let probs = softmax_slice(z);
    let rest = probs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label)
        .fold(F::zero(), |acc, (_, &p)| acc + p);
    (log_q, rest, probs)
}

/// Softmax cross-entropy `-log q_label`.
pub fn cross_entropy<F: Scalar>(logits: &LogitVector<F>, label: usize) -> Result<F> {
    logits.check_label(label)?;
    Ok(logits.log_sum_exp() - logits.values()[label])
}

/// `-(1 - q_y)^gamma * log(q_y)` for a one-hot target `y`.
pub fn focal_loss<F: Scalar>(logits: &LogitVector<F>, label: usize, gamma: F) -> Result<F> {
    logits.check_label(label)?;
    check_gamma(gamma)?;
    let (log_q, rest, _) = true_class_terms(logits, label);
    Ok(-rest.powf(gamma) * log_q)
}

/// Gradient of [`focal_loss`] with respect to the logits.
///
/// With `p = q_y`, `dL/dz_j = (gamma p (1-p)^(gamma-1) ln p - (1-p)^gamma) (delta_jy - q_j)`.
pub fn focal_loss_grad<F: Scalar>(
    logits: &LogitVector<F>,
    label: usize,
    gamma: F,
) -> Result<Vec<F>> {
    logits.check_label(label)?;
    check_gamma(gamma)?;
    let (log_q, rest, probs) = true_class_terms(logits, label);
    let k = probs.len();
    if gamma == F::zero() {
        let mut g = probs;
        g[label] = -rest;
        return Ok(g);
    }
    if rest == F::zero() {
        return Ok(vec![F::zero(); k]);
    }
    let p = probs[label];
    let modulating = rest.powf(gamma);
    let coef = gamma * p * log_q * modulating / rest - modulating;
    Ok(probs
        .iter()
        .enumerate()
        .map(|(j, &q)| {
            if j == label {
                coef * rest
            } else {
                -coef * q
            }
        })
        .collect())
}

fn check_gamma<F: Scalar>(gamma: F) -> Result<()> {
    if !gamma.is_finite() || gamma < F::zero() {
        return Err(CalibError::InvalidConfig(format!(
            "gamma must be finite and >= 0, got {gamma}"
        )));
    }
    Ok(())
}

/// Binary cross-entropy of a single logit against a 0/1 target, in the
/// overflow-free form `softplus(z) - y z`.
pub fn binary_cross_entropy_with_logit<F: Scalar>(z: F, target: bool) -> F {
    let softplus = z.max(F::zero()) + (-z.abs()).exp().ln_1p();
    if target {
        softplus - z
    } else {
        softplus
    }
}

/// One-vs-rest sigmoid BCE summed over classes.
pub fn bce_loss<F: Scalar>(logits: &LogitVector<F>, label: usize) -> Result<F> {
    logits.check_label(label)?;
    Ok(logits
        .values()
        .iter()
        .enumerate()
        .fold(F::zero(), |acc, (i, &z)| {
            acc + binary_cross_entropy_with_logit(z, i == label)
        }))
}

/// `sigmoid(z_i) - y_i` per class.
pub fn bce_loss_grad<F: Scalar>(logits: &LogitVector<F>, label: usize) -> Result<Vec<F>> {
    logits.check_label(label)?;
    Ok(logits
        .values()
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let s = sigmoid(z);
            if i == label {
                s - F::one()
            } else {
                s
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(v: &[f64]) -> LogitVector<f64> {
        LogitVector::from_f64(v).unwrap()
    }

    #[test]
    fn focal_gamma_zero_is_cross_entropy() {
        let l = focal_loss(&lv(&[0.0, 0.0]), 0, 0.0).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn focal_half_probability_gamma_two() {
        // q = 0.5: 0.25 * ln 2
        let l = focal_loss(&lv(&[0.0, 0.0]), 1, 2.0).unwrap();
        assert!((l - 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!((l - 0.173287).abs() < 1e-6);
    }

    #[test]
    fn focal_confident_prediction_vanishes() {
        for gamma in [0.0, 0.5, 2.0, 5.0] {
            let l = focal_loss(&lv(&[60.0, 0.0, -5.0]), 0, gamma).unwrap();
            assert!((0.0..1e-25).contains(&l), "gamma {gamma}: {l}");
            let g = focal_loss_grad(&lv(&[800.0, 0.0]), 0, gamma).unwrap();
            assert!(g.iter().all(|v| v.abs() < 1e-300), "{g:?}");
        }
    }

    #[test]
    fn focal_grad_gamma_zero_is_q_minus_y() {
        assert_eq!(focal_loss_grad(&lv(&[0.0, 0.0]), 0, 0.0).unwrap(), vec![-0.5, 0.5]);
    }

    #[test]
    fn label_out_of_range() {
        let err = CalibError::LabelOutOfRange {
            label: 2,
            classes: 2,
        };
        assert_eq!(focal_loss(&lv(&[0.0, 0.0]), 2, 1.0), Err(err.clone()));
        assert_eq!(focal_loss_grad(&lv(&[0.0, 0.0]), 2, 1.0), Err(err.clone()));
        assert_eq!(bce_loss(&lv(&[0.0, 0.0]), 2), Err(err.clone()));
        assert_eq!(bce_loss_grad(&lv(&[0.0, 0.0]), 2), Err(err));
    }

    #[test]
    fn negative_gamma_rejected() {
        assert!(focal_loss(&lv(&[0.0, 0.0]), 0, -1.0).is_err());
    }

    #[test]
    fn bce_hand_values() {
        assert!((binary_cross_entropy_with_logit(0.0f64, true) - 2f64.ln()).abs() < 1e-15);
        let l = bce_loss(&lv(&[0.0, 0.0]), 0).unwrap();
        assert!((l - 1.386294).abs() < 1e-6);
        let perfect = bce_loss(&lv(&[50.0, -50.0, -50.0]), 0).unwrap();
        assert!(perfect < 1e-20);
    }

    #[test]
    fn bce_grad_hand_values() {
        let g = bce_loss_grad(&lv(&[0.0, 0.0]), 0).unwrap();
        assert_eq!(g, vec![-0.5, 0.5]);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::<f64>::focal(2.0).validate().is_ok());
        assert!(LossConfig::<f64>::focal(f64::NAN).validate().is_err());
        let mut c = LossConfig::<f64>::adafocal();
        c.gamma_clamp = (3.0, 1.0);
        assert!(c.validate().is_err());
        c.gamma_clamp = (0.0, 20.0);
        c.n_bins = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn works_in_f32() {
        let z = LogitVector::<f32>::from_f64(&[0.0, 0.0]).unwrap();
        let l = focal_loss(&z, 0, 2.0f32).unwrap();
        assert!((l - 0.173_287).abs() < 1e-6);
    }
}
