//! Reference computations that do not share code paths with the library.
#![allow(dead_code)]

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use smartfridge_core::LogitVector64;

/// Central finite-difference gradient.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, z: &[f64], h: f64) -> Vec<f64> {
    (0..z.len())
        .map(|i| {
            let mut plus = z.to_vec();
            let mut minus = z.to_vec();
            plus[i] += h;
            minus[i] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

/// Max-norm relative error of `analytic` against `numeric`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = numeric.iter().map(|v| v.abs()).fold(1e-8, f64::max);
    diff / scale
}

/// Direct softmax-then-log evaluation of the focal loss.
pub fn naive_focal(z: &[f64], label: usize, gamma: f64) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    let q = e[label] / s;
    -(1.0 - q).powf(gamma) * q.ln()
}

pub fn naive_bce(z: &[f64], label: usize) -> f64 {
    z.iter()
        .enumerate()
        .map(|(i, &v)| {
            let s = 1.0 / (1.0 + (-v).exp());
            if i == label {
                -s.ln()
            } else {
                -(1.0 - s).ln()
            }
        })
        .sum()
}

pub fn rational(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

/// The `f64` nearest to `r` (ties to even).
pub fn nearest_f64(r: &BigRational) -> f64 {
    let approx = r.to_f64().expect("in range");
    let mut best = approx;
    let mut best_dist = (rational(approx) - r).abs();
    for cand in [approx.next_down(), approx.next_up()] {
        let dist = (rational(cand) - r).abs();
        let even = cand.to_bits() & 1 == 0;
        if dist < best_dist || (dist == best_dist && even) {
            best = cand;
            best_dist = dist;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleBin {
    pub count: usize,
    pub avg_confidence: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub bins: Vec<OracleBin>,
    pub ece: f64,
    pub mce: f64,
    pub oce: f64,
    pub uce: f64,
}

/// Brute-force reliability statistics: each bin collects its members by an
/// exact rational interval test `i/n <= c < (i+1)/n` (last bin closed), and
/// every sum is carried out exactly before a single rounding.
pub fn reliability_oracle(conf: &[f64], correct: &[bool], n_bins: usize) -> OracleReport {
    let n = conf.len();
    let denom = BigInt::from(n_bins);
    let mut bins = Vec::new();
    let mut over = BigRational::zero();
    let mut under = BigRational::zero();
    let mut mce = 0.0f64;
    for i in 0..n_bins {
        let lo = BigRational::new(BigInt::from(i), denom.clone());
        let hi = BigRational::new(BigInt::from(i + 1), denom.clone());
        let members: Vec<usize> = (0..n)
            .filter(|&j| {
                let c = rational(conf[j]);
                c >= lo && (c < hi || (i + 1 == n_bins && c <= hi))
            })
            .collect();
        if members.is_empty() {
            bins.push(OracleBin {
                count: 0,
                avg_confidence: None,
                accuracy: None,
            });
            continue;
        }
        let exact_sum = members
            .iter()
            .fold(BigRational::zero(), |acc, &j| acc + rational(conf[j]));
        let count = members.len() as f64;
        let c_b = nearest_f64(&exact_sum) / count;
        let a_b = members.iter().filter(|&&j| correct[j]).count() as f64 / count;
        let weight = count / n as f64;
        if c_b > a_b {
            over += rational(weight * (c_b - a_b));
        } else if a_b > c_b {
            under += rational(weight * (a_b - c_b));
        }
        mce = mce.max((c_b - a_b).abs());
        bins.push(OracleBin {
            count: members.len(),
            avg_confidence: Some(c_b),
            accuracy: Some(a_b),
        });
    }
    let oce = nearest_f64(&over);
    let uce = nearest_f64(&under);
    OracleReport {
        bins,
        ece: oce + uce,
        mce,
        oce,
        uce,
    }
}

/// Logits whose softmax is the true label distribution: `z ~ N(0, spread^2)`
/// per class, then the label is drawn from `softmax(z)`. Returned logits are
/// multiplied by `scale`.
pub fn calibrated_logits(
    n: usize,
    k: usize,
    spread: f64,
    scale: f64,
    seed: u64,
) -> (Vec<LogitVector64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut logits = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..k)
            .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = e.iter().sum();
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut label = k - 1;
        for (i, v) in e.iter().enumerate() {
            acc += v;
            if u < acc {
                label = i;
                break;
            }
        }
        labels.push(label);
        logits.push(LogitVector64::new(z.iter().map(|v| v * scale).collect()).unwrap());
    }
    (logits, labels)
}

/// Mean NLL of `softmax(z / t)`, evaluated directly.
pub fn nll_at(logits: &[LogitVector64], labels: &[usize], t: f64) -> f64 {
    let mut total = 0.0;
    for (z, &y) in logits.iter().zip(labels) {
        let s: Vec<f64> = z.values().iter().map(|v| v / t).collect();
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = s.iter().map(|v| (v - max).exp()).sum();
        total += -(s[y] - max - denom.ln());
    }
    total / logits.len() as f64
}

/// Best temperature on the grid `lo, lo + step, ..., hi`.
pub fn grid_temperature(
    logits: &[LogitVector64],
    labels: &[usize],
    lo: f64,
    hi: f64,
    step: f64,
) -> f64 {
    let steps = ((hi - lo) / step).round() as usize;
    (0..=steps)
        .map(|i| lo + step * i as f64)
        .map(|t| (t, nll_at(logits, labels, t)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap()
        .0
}
