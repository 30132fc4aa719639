//! Per-bin adaptive focusing parameters.
//!
//! After every epoch each non-empty validation bin rescales its gamma by
//! `exp(lambda * (C_b - A_b))` and clamps the result; empty bins keep theirs.

use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::reliability::{bin_index, CalibrationReport};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct AdaFocalState<F> {
    /// Number of updates applied so far.
    pub t: usize,
    pub gammas: Vec<F>,
    pub lambda: F,
    pub clamp: (F, F),
}

impl<F: Scalar> AdaFocalState<F> {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn new(n_bins: usize, initial_gamma: F, lambda: F, clamp: (F, F)) -> Result<Self> {
        if n_bins == 0 {
            return Err(CalibError::InvalidConfig("n_bins must be >= 1".into()));
        }
        if !(clamp.0 <= clamp.1) || !lambda.is_finite() {
            return Err(CalibError::InvalidConfig(format!(
                "invalid adafocal parameters: lambda {lambda}, clamp [{}, {}]",
                clamp.0, clamp.1
            )));
        }
        let g = initial_gamma.max(clamp.0).min(clamp.1);
        Ok(Self {
            t: 0,
            gammas: vec![g; n_bins],
            lambda,
            clamp,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.gammas.len()
    }

    /// Gamma of the bin containing confidence `c`.
    pub fn gamma_for(&self, c: F) -> F {
        self.gammas[bin_index(c, self.gammas.len())]
    }

    pub fn within_clamp(&self) -> bool {
        self.gammas
            .iter()
            .all(|&g| g >= self.clamp.0 && g <= self.clamp.1)
    }
}

/// One multiplicative update from a validation reliability report.
pub fn adafocal_step<F: Scalar>(
    state: &AdaFocalState<F>,
    val_report: &CalibrationReport<F>,
) -> Result<AdaFocalState<F>> {
    if val_report.n_bins() != state.n_bins() {
        return Err(CalibError::LengthMismatch {
            expected: state.n_bins(),
            got: val_report.n_bins(),
        });
    }
    let (lo, hi) = state.clamp;
    let gammas = state
        .gammas
        .iter()
        .zip(&val_report.bins)
        .map(|(&g, bin)| match bin.gap() {
            Some(gap) => (g * (state.lambda * gap).exp()).max(lo).min(hi),
            None => g,
        })
        .collect();
    Ok(AdaFocalState {
        t: state.t + 1,
        gammas,
        lambda: state.lambda,
        clamp: state.clamp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reliability::CalibrationBin;

    fn report(gaps: &[Option<(f64, f64)>]) -> CalibrationReport<f64> {
        let n = gaps.len();
        CalibrationReport {
            bins: gaps
                .iter()
                .enumerate()
                .map(|(i, g)| CalibrationBin {
                    lo: i as f64 / n as f64,
                    hi: (i + 1) as f64 / n as f64,
                    count: usize::from(g.is_some()),
                    avg_confidence: g.map(|(c, _)| c),
                    accuracy: g.map(|(_, a)| a),
                })
                .collect(),
            ece: 0.0,
            mce: 0.0,
            oce: 0.0,
            uce: 0.0,
            n_samples: 1,
        }
    }

    #[test]
    fn empty_bins_keep_gamma_and_t_advances() {
        let s = AdaFocalState::new(2, 2.0, 1.0, (0.0, 20.0)).unwrap();
        let next = adafocal_step(&s, &report(&[None, Some((0.9, 0.5))])).unwrap();
        assert_eq!(next.gammas[0], 2.0);
        assert!(next.gammas[1] > 2.0);
        assert_eq!(next.t, 1);
    }

    #[test]
    fn lower_clamp() {
        let s = AdaFocalState::new(1, 0.5, 10.0, (0.25, 20.0)).unwrap();
        let next = adafocal_step(&s, &report(&[Some((0.1, 0.9))])).unwrap();
        assert_eq!(next.gammas[0], 0.25);
    }

    #[test]
    fn bin_count_mismatch() {
        let s = AdaFocalState::new(3, 2.0, 1.0, (0.0, 20.0)).unwrap();
        assert!(matches!(
            adafocal_step(&s, &report(&[None])),
            Err(CalibError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn initial_gamma_is_clamped() {
        let s = AdaFocalState::new(2, 50.0, 1.0, (0.0, 20.0)).unwrap();
        assert_eq!(s.gammas, vec![20.0, 20.0]);
        assert!(AdaFocalState::new(2, 1.0, 1.0, (5.0, 1.0)).is_err());
    }
}
