//! Post-hoc temperature scaling.

use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::prob::{softmax, LogitVector, ProbVector};
use crate::scalar::Scalar;

pub const T_MIN: f64 = 0.05;
pub const T_MAX: f64 = 20.0;
pub const T_TOLERANCE: f64 = 1e-4;

const GRID_POINTS: usize = 97;
const MAX_SWEEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperatureMode {
    Scalar,
    PerClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Temperature<F> {
    mode: TemperatureMode,
    values: Vec<F>,
}

impl<F: Scalar> Temperature<F> {
    pub fn scalar(t: F) -> Result<Self> {
        Self::checked(TemperatureMode::Scalar, vec![t])
    }

    pub fn per_class(values: Vec<F>) -> Result<Self> {
        if values.is_empty() {
            return Err(CalibError::EmptyInput);
        }
        Self::checked(TemperatureMode::PerClass, values)
    }

    fn checked(mode: TemperatureMode, values: Vec<F>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|t| !(t.is_finite() && **t > F::zero())) {
            return Err(CalibError::InvalidConfig(format!(
                "temperature must be finite and > 0, got {bad}"
            )));
        }
        Ok(Self { mode, values })
    }

    pub fn identity() -> Self {
        Self {
            mode: TemperatureMode::Scalar,
            values: vec![F::one()],
        }
    }

    pub fn mode(&self) -> TemperatureMode {
        self.mode
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    /// Divides the logits by the temperature (element-wise in per-class mode).
    pub fn scale(&self, logits: &LogitVector<F>) -> Result<LogitVector<F>> {
        let z = logits.values();
        match self.mode {
            TemperatureMode::Scalar => {
                let t = self.values[0];
                LogitVector::new(z.iter().map(|&v| v / t).collect())
            }
            TemperatureMode::PerClass => {
                if self.values.len() != z.len() {
                    return Err(CalibError::LengthMismatch {
                        expected: self.values.len(),
                        got: z.len(),
                    });
                }
                LogitVector::new(z.iter().zip(&self.values).map(|(&v, &t)| v / t).collect())
            }
        }
    }
}

/// Softmax of the temperature-scaled logits.
pub fn apply_temperature<F: Scalar>(
    logits: &LogitVector<F>,
    temperature: &Temperature<F>,
) -> Result<ProbVector<F>> {
    Ok(softmax(&temperature.scale(logits)?))
}

/// Mean negative log-likelihood of `softmax(z / t)` with per-class
/// temperatures `t` (a single entry broadcasts).
pub fn mean_nll<F: Scalar>(logits: &[LogitVector<F>], labels: &[usize], t: &[F]) -> F {
    let mut total = F::zero();
    let mut scaled = Vec::new();
    for (z, &y) in logits.iter().zip(labels) {
        scaled.clear();
        scaled.extend(
            z.values()
                .iter()
                .enumerate()
                .map(|(i, &v)| v / if t.len() == 1 { t[0] } else { t[i] }),
        );
        total = total + crate::prob::log_sum_exp(&scaled) - scaled[y];
    }
    total / F::from_count(logits.len())
}

/// Fits the temperature minimising validation NLL over `T in [0.05, 20]`.
///
/// Scalar mode: a log-spaced grid brackets the minimum, then golden-section
/// search narrows it to within `1e-4`. Per-class mode runs the same 1-D search
/// coordinate-wise until no temperature moves by more than the tolerance.
pub fn fit_temperature<F: Scalar>(
    logits: &[LogitVector<F>],
    labels: &[usize],
    mode: TemperatureMode,
) -> Result<Temperature<F>> {
    if logits.is_empty() {
        return Err(CalibError::EmptyInput);
    }
    if logits.len() != labels.len() {
        return Err(CalibError::LengthMismatch {
            expected: logits.len(),
            got: labels.len(),
        });
    }
    let k = logits[0].n_classes();
    if let Some(z) = logits.iter().find(|z| z.n_classes() != k) {
        return Err(CalibError::LengthMismatch {
            expected: k,
            got: z.n_classes(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= k) {
        return Err(CalibError::LabelOutOfRange { label, classes: k });
    }
    if logits.len() < k {
        return Err(CalibError::TooFewSamples {
            needed: k,
            got: logits.len(),
        });
    }
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(CalibError::NotIdentifiable(format!(
            "every sample has label {}",
            labels[0]
        )));
    }

    match mode {
        TemperatureMode::Scalar => {
            let t = minimize_1d(|t| mean_nll(logits, labels, &[t]));
            Temperature::scalar(t)
        }
        TemperatureMode::PerClass => {
            let mut temps = vec![F::one(); k];
            for _ in 0..MAX_SWEEPS {
                let mut moved = F::zero();
                for c in 0..k {
                    let mut trial = temps.clone();
                    let best = minimize_1d(|t| {
                        trial[c] = t;
                        mean_nll(logits, labels, &trial)
                    });
                    moved = moved.max((best - temps[c]).abs());
                    temps[c] = best;
                }
                if moved < F::lit(T_TOLERANCE) {
                    break;
                }
            }
            Temperature::per_class(temps)
        }
    }
}

/// Minimises a unimodal function of `T` on `[T_MIN, T_MAX]`.
fn minimize_1d<F: Scalar>(mut f: impl FnMut(F) -> F) -> F {
    let (lo, hi) = (F::lit(T_MIN).ln(), F::lit(T_MAX).ln());
    let step = (hi - lo) / F::from_count(GRID_POINTS - 1);
    let grid: Vec<F> = (0..GRID_POINTS)
        .map(|i| (lo + step * F::from_count(i)).exp())
        .collect();
    let values: Vec<F> = grid.iter().map(|&t| f(t)).collect();
    let best = crate::prob::argmax(&values.iter().map(|&v| -v).collect::<Vec<_>>());

    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(GRID_POINTS - 1)];
    let inv_phi = F::lit((5f64.sqrt() - 1.0) / 2.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > F::lit(T_TOLERANCE) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mid = (a + b) / F::lit(2.0);
    // The bracket may have collapsed onto a boundary grid point.
    [grid[best], mid]
        .into_iter()
        .min_by(|x, y| f(*x).partial_cmp(&f(*y)).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap_or(mid)
}
