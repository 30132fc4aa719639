//! Equal-width reliability binning and the calibration errors derived from it.

use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::scalar::Scalar;
use crate::sum::exact_sum;

/// One equal-width confidence interval `[lo, hi)` (the last bin is closed).
///
/// Empty bins carry `None` for both statistics instead of a zero gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct CalibrationBin<F> {
    pub lo: F,
    pub hi: F,
    pub count: usize,
    pub avg_confidence: Option<F>,
    pub accuracy: Option<F>,
}

impl<F: Scalar> CalibrationBin<F> {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// `C_b - A_b`; positive means over-confident.
    pub fn gap(&self) -> Option<F> {
        Some(self.avg_confidence? - self.accuracy?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct CalibrationReport<F> {
    pub bins: Vec<CalibrationBin<F>>,
    /// Expected calibration error, `oce + uce`.
    pub ece: F,
    /// Largest absolute per-bin gap.
    pub mce: F,
    /// Over-confidence part: weighted positive gaps `C_b - A_b`.
    pub oce: F,
    /// Under-confidence part: weighted positive gaps `A_b - C_b`.
    pub uce: F,
    pub n_samples: usize,
}

/// Lower edge of bin `i` out of `n`.
#[inline]
pub fn bin_edge<F: Scalar>(i: usize, n: usize) -> F {
    F::from_count(i) / F::from_count(n)
}

/// Bin containing confidence `c`: the largest `i` with `c >= i / n_bins` in
/// exact arithmetic, capped so that `c = 1` lands in the last bin.
///
/// `c * n` is split into its rounded product and the rounding error (via
/// fused multiply-add) so edges such as 1/3 that are not representable are
/// still compared exactly.
pub fn bin_index<F: Scalar>(c: F, n_bins: usize) -> usize {
    let n = F::from_count(n_bins);
    let product = c * n;
    let error = c.mul_add(n, -product);
    let mut floor = product.floor();
    if floor == product && error < F::zero() {
        floor = floor - F::one();
    }
    floor.to_usize().unwrap_or(0).min(n_bins - 1)
}

/// Groups `(confidence, correct)` pairs into `n_bins` equal-width bins over
/// `[0, 1]` and computes ECE/MCE/OCE/UCE. Sums are correctly rounded, so the
/// report does not depend on sample order.
pub fn reliability_bins<F: Scalar>(
    confidences: &[F],
    correct: &[bool],
    n_bins: usize,
) -> Result<CalibrationReport<F>> {
    if confidences.is_empty() {
        return Err(CalibError::EmptyInput);
    }
    if confidences.len() != correct.len() {
        return Err(CalibError::LengthMismatch {
            expected: confidences.len(),
            got: correct.len(),
        });
    }
    if n_bins == 0 {
        return Err(CalibError::InvalidConfig("n_bins must be >= 1".into()));
    }
    if let Some(&c) = confidences
        .iter()
        .find(|c| !(**c >= F::zero() && **c <= F::one()))
    {
        return Err(CalibError::ConfidenceOutOfRange(c.as_f64()));
    }

    let mut members: Vec<Vec<F>> = vec![Vec::new(); n_bins];
    let mut hits = vec![0usize; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = bin_index(c, n_bins);
        members[b].push(c);
        hits[b] += usize::from(ok);
    }

    let n = F::from_count(confidences.len());
    let mut bins = Vec::with_capacity(n_bins);
    let mut over = Vec::new();
    let mut under = Vec::new();
    let mut mce = F::zero();
    for (i, (conf, hit)) in members.into_iter().zip(hits).enumerate() {
        let count = conf.len();
        let (avg_confidence, accuracy) = if count == 0 {
            (None, None)
        } else {
            let cnt = F::from_count(count);
            let c_b = exact_sum(conf) / cnt;
            let a_b = F::from_count(hit) / cnt;
            let weight = cnt / n;
            let gap = c_b - a_b;
            if gap > F::zero() {
                over.push(weight * gap);
            } else if gap < F::zero() {
                under.push(weight * -gap);
            }
            mce = mce.max(gap.abs());
            (Some(c_b), Some(a_b))
        };
        bins.push(CalibrationBin {
            lo: bin_edge(i, n_bins),
            hi: bin_edge(i + 1, n_bins),
            count,
            avg_confidence,
            accuracy,
        });
    }
    let oce = exact_sum(over);
    let uce = exact_sum(under);
    Ok(CalibrationReport {
        bins,
        ece: oce + uce,
        mce,
        oce,
        uce,
        n_samples: confidences.len(),
    })
}

impl<F: Scalar> CalibrationReport<F> {
    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    /// Sample-weighted mean confidence over all bins.
    pub fn mean_confidence(&self) -> F {
        self.weighted(|b| b.avg_confidence)
    }

    /// Fraction of correct predictions.
    pub fn accuracy(&self) -> F {
        self.weighted(|b| b.accuracy)
    }

    fn weighted(&self, stat: impl Fn(&CalibrationBin<F>) -> Option<F>) -> F {
        let n = F::from_count(self.n_samples);
        exact_sum(
            self.bins
                .iter()
                .filter_map(|b| stat(b).map(|s| s * F::from_count(b.count))),
        ) / n
    }

    /// Tab-separated table, one bin per row; summary scalars and the column
    /// header are `#` comment lines. Empty-bin statistics print as `-`.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# n_samples {}\n# ece {}\n# mce {}\n# oce {}\n# uce {}",
            self.n_samples, self.ece, self.mce, self.oce, self.uce
        );
        out.push_str("# lo\thi\tcount\tavg_confidence\taccuracy\n");
        for b in &self.bins {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                b.lo,
                b.hi,
                b.count,
                opt(b.avg_confidence),
                opt(b.accuracy)
            );
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let bad = |msg: String| CalibError::InvalidConfig(format!("reliability table: {msg}"));
        let mut bins = Vec::new();
        let (mut ece, mut mce, mut oce, mut uce, mut n_samples) = (None, None, None, None, None);
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            if let Some(comment) = line.strip_prefix('#') {
                let mut parts = comment.split_whitespace();
                let (Some(key), Some(value)) = (parts.next(), parts.next()) else {
                    continue;
                };
                let parse = || parse_scalar::<F>(value).ok_or_else(|| bad(line.to_string()));
                match key {
                    "ece" => ece = Some(parse()?),
                    "mce" => mce = Some(parse()?),
                    "oce" => oce = Some(parse()?),
                    "uce" => uce = Some(parse()?),
                    "n_samples" => {
                        n_samples = Some(value.parse().map_err(|_| bad(line.to_string()))?)
                    }
                    _ => {}
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(bad(format!("expected 5 columns: {line}")));
            }
            let num = |s: &str| parse_scalar::<F>(s).ok_or_else(|| bad(line.to_string()));
            let maybe = |s: &str| -> Result<Option<F>> {
                if s == "-" {
                    Ok(None)
                } else {
                    num(s).map(Some)
                }
            };
            bins.push(CalibrationBin {
                lo: num(cols[0])?,
                hi: num(cols[1])?,
                count: cols[2].parse().map_err(|_| bad(line.to_string()))?,
                avg_confidence: maybe(cols[3])?,
                accuracy: maybe(cols[4])?,
            });
        }
        let missing = |k: &str| bad(format!("missing `{k}`"));
        Ok(Self {
            bins,
            ece: ece.ok_or_else(|| missing("ece"))?,
            mce: mce.ok_or_else(|| missing("mce"))?,
            oce: oce.ok_or_else(|| missing("oce"))?,
            uce: uce.ok_or_else(|| missing("uce"))?,
            n_samples: n_samples.ok_or_else(|| missing("n_samples"))?,
        })
    }

    /// CSV with a header row and one row per bin; empty-bin statistics are blank.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        self.write_delimited(writer, b',')
    }

    /// As [`write_csv`](Self::write_csv) with another field delimiter.
    pub fn write_delimited<W: io::Write>(&self, writer: W, delimiter: u8) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_writer(writer);
        w.write_record(["lo", "hi", "count", "avg_confidence", "accuracy"])?;
        for b in &self.bins {
            let blank = |v: Option<F>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                b.lo.to_string(),
                b.hi.to_string(),
                b.count.to_string(),
                blank(b.avg_confidence),
                blank(b.accuracy),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn opt<F: Scalar>(v: Option<F>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

fn parse_scalar<F: Scalar>(s: &str) -> Option<F> {
    s.parse::<f64>().ok().map(F::lit)
}
