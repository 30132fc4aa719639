//! Logit and probability vectors.

use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::scalar::Scalar;

/// Raw, unbounded class scores. Always at least two finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<F>", into = "Vec<F>", bound = "F: Scalar")]
pub struct LogitVector<F>(Vec<F>);

impl<F: Scalar> LogitVector<F> {
    pub fn new(values: Vec<F>) -> Result<Self> {
        if values.len() < 2 {
            return Err(CalibError::TooFewClasses(values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CalibError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| F::lit(v)).collect())
    }

    pub fn values(&self) -> &[F] {
        &self.0
    }

    pub fn n_classes(&self) -> usize {
        self.0.len()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn scaled(&self, factor: F) -> Result<Self> {
        Self::new(self.0.iter().map(|&v| v * factor).collect())
    }

    pub(crate) fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.0.len() {
            return Err(CalibError::LabelOutOfRange {
                label,
                classes: self.0.len(),
            });
        }
        Ok(())
    }

    /// `log(sum(exp(z)))`, shifted by the maximum so large logits do not overflow.
    pub fn log_sum_exp(&self) -> F {
        log_sum_exp(&self.0)
    }
}

impl<F: Scalar> TryFrom<Vec<F>> for LogitVector<F> {
    type Error = CalibError;

    fn try_from(values: Vec<F>) -> Result<Self> {
        Self::new(values)
    }
}

impl<F> From<LogitVector<F>> for Vec<F> {
    fn from(v: LogitVector<F>) -> Self {
        v.0
    }
}

/// How the entries of a [`ProbVector`] relate to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbMode {
    /// Entries form a point on the simplex.
    Softmax,
    /// Independent one-vs-rest probabilities; the sum is unconstrained.
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector<F> {
    values: Vec<F>,
    mode: ProbMode,
}

impl<F: Scalar> ProbVector<F> {
    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn mode(&self) -> ProbMode {
        self.mode
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }

    /// Top-class probability.
    pub fn confidence(&self) -> F {
        self.values[self.argmax()]
    }

    pub fn into_vec(self) -> Vec<F> {
        self.values
    }
}

pub(crate) fn argmax<F: Scalar>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn log_sum_exp<F: Scalar>(values: &[F]) -> F {
    let max = values.iter().copied().fold(F::neg_infinity(), F::max);
    let sum = values
        .iter()
        .fold(F::zero(), |acc, &v| acc + (v - max).exp());
    max + sum.ln()
}

/// Softmax with max-subtraction.
pub fn softmax<F: Scalar>(logits: &LogitVector<F>) -> ProbVector<F> {
    ProbVector {
        values: softmax_slice(logits.values()),
        mode: ProbMode::Softmax,
    }
}

pub(crate) fn softmax_slice<F: Scalar>(values: &[F]) -> Vec<F> {
    let max = values.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = values.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().fold(F::zero(), |acc, &e| acc + e);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Per-class logistic probabilities.
pub fn sigmoid_probs<F: Scalar>(logits: &LogitVector<F>) -> ProbVector<F> {
    ProbVector {
        values: logits.values().iter().map(|&z| sigmoid(z)).collect(),
        mode: ProbMode::Sigmoid,
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_symmetric() {
        let p = softmax(&LogitVector::<f64>::from_f64(&[0.0, 0.0]).unwrap());
        assert_eq!(p.values(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_hand_value() {
        let p = softmax(&LogitVector::<f64>::from_f64(&[2.0, 0.0]).unwrap());
        let e2 = 2f64.exp();
        assert!(close(p.values()[0], e2 / (e2 + 1.0), 1e-15));
        assert!(close(p.values()[0], 0.880797, 1e-6));
        assert!(close(p.values()[1], 0.119203, 1e-6));
    }

    #[test]
    fn softmax_large_logits_stay_finite() {
        let p = softmax(&LogitVector::<f64>::from_f64(&[1000.0, 0.0]).unwrap());
        assert!(p.values().iter().all(|v| v.is_finite()));
        assert!(close(p.values()[0], 1.0, 1e-12));
        assert!(p.values()[1] < 1e-300);
        let p32 = softmax(&LogitVector::<f32>::from_f64(&[1000.0, 0.0]).unwrap());
        assert!(p32.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_non_finite_and_short() {
        assert_eq!(
            LogitVector::<f64>::new(vec![0.0, f64::NAN]),
            Err(CalibError::NonFinite(1))
        );
        assert_eq!(
            LogitVector::<f64>::new(vec![f64::INFINITY, 0.0]),
            Err(CalibError::NonFinite(0))
        );
        assert_eq!(
            LogitVector::<f64>::new(vec![1.0]),
            Err(CalibError::TooFewClasses(1))
        );
    }

    #[test]
    fn sigmoid_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert_eq!(sigmoid(800.0f64), 1.0);
    }

    #[test]
    fn serde_rejects_invalid_logits() {
        let bad: std::result::Result<LogitVector<f64>, _> = serde_json::from_str("[1.0]");
        assert!(bad.is_err());
        let ok: LogitVector<f64> = serde_json::from_str("[1.0, 2.0]").unwrap();
        assert_eq!(ok.values(), &[1.0, 2.0]);
    }
}
