//! Split-conformal fitting, interval construction and coverage.

use serde::{Deserialize, Serialize};

use crate::error::{probability, Error, Result};
use crate::quantile::{conformal_quantile, duplicate_fraction, MiscoverageSpec};
use crate::scores::{adjustment_points, banded, BandedRecord, PredictionRecord, ScoreSpec};

const DUPLICATE_WARN_FRACTION: f64 = 0.01;

/// Single adjustment `q` applied to both endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricCalibration {
    pub q: f64,
    pub alpha: f64,
    pub n: usize,
    pub degenerate: bool,
    pub spec: ScoreSpec,
}

/// Independent lower and upper adjustments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymmetricCalibration {
    pub q_lo: f64,
    pub q_hi: f64,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub n: usize,
    pub degenerate: bool,
    pub spec: ScoreSpec,
}

/// Closed prediction interval `[lo, hi]`.
///
/// Negative adjustments can push `hi` below `lo`. Such an interval is
/// treated as empty: [`Interval::length`] clamps to zero while
/// [`Interval::raw_length`] keeps the signed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn raw_length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn length(&self) -> f64 {
        self.raw_length().max(0.0)
    }

    pub fn is_inverted(&self) -> bool {
        self.hi < self.lo
    }

    /// An endpoint came from an infinite (rank past end) adjustment.
    pub fn is_degenerate(&self) -> bool {
        !self.lo.is_finite() || !self.hi.is_finite()
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }
}

fn check_homogeneous(records: &[PredictionRecord]) -> Result<()> {
    let Some(first) = records.first() else {
        return Err(Error::Empty("calibration set"));
    };
    let kind = first.is_point();
    if records.iter().any(|r| r.is_point() != kind) {
        return Err(Error::Format("calibration set mixes point and sample records".into()));
    }
    Ok(())
}

fn warn_on_ties(scores: &[f64], what: &str) {
    let frac = duplicate_fraction(scores);
    if frac > DUPLICATE_WARN_FRACTION {
        log::warn!("{:.1}% of {what} scores are tied; the upper coverage bound assumes distinct scores", 100.0 * frac);
    }
}

pub fn fit_symmetric(cal: &[PredictionRecord], spec: &ScoreSpec, alpha: f64) -> Result<SymmetricCalibration> {
    check_homogeneous(cal)?;
    fit_symmetric_banded(&banded(cal, spec)?, spec, alpha)
}

pub fn fit_asymmetric(
    cal: &[PredictionRecord],
    spec: &ScoreSpec,
    alpha_lo: f64,
    alpha_hi: f64,
) -> Result<AsymmetricCalibration> {
    check_homogeneous(cal)?;
    fit_asymmetric_banded(&banded(cal, spec)?, spec, alpha_lo, alpha_hi)
}

pub(crate) fn fit_symmetric_banded(cal: &[BandedRecord], spec: &ScoreSpec, alpha: f64) -> Result<SymmetricCalibration> {
    probability("alpha", alpha)?;
    let scores: Vec<f64> = cal.iter().map(|r| r.pair().symmetric()).collect();
    let q = conformal_quantile(&scores, alpha)?;
    warn_on_ties(&scores, "symmetric");
    Ok(SymmetricCalibration { q: q.value, alpha, n: cal.len(), degenerate: q.degenerate, spec: *spec })
}

pub(crate) fn fit_asymmetric_banded(
    cal: &[BandedRecord],
    spec: &ScoreSpec,
    alpha_lo: f64,
    alpha_hi: f64,
) -> Result<AsymmetricCalibration> {
    MiscoverageSpec::Asymmetric { alpha_lo, alpha_hi }.validate()?;
    let (lo, hi): (Vec<f64>, Vec<f64>) = cal
        .iter()
        .map(|r| {
            let p = r.pair();
            (p.s_lo, p.s_hi)
        })
        .unzip();
    let q_lo = conformal_quantile(&lo, alpha_lo)?;
    let q_hi = conformal_quantile(&hi, alpha_hi)?;
    warn_on_ties(&lo, "lower");
    warn_on_ties(&hi, "upper");
    Ok(AsymmetricCalibration {
        q_lo: q_lo.value,
        q_hi: q_hi.value,
        alpha_lo,
        alpha_hi,
        n: cal.len(),
        degenerate: q_lo.degenerate || q_hi.degenerate,
        spec: *spec,
    })
}

/// `[f_lo − q, f_hi + q]`.
pub fn predict_interval_symmetric(
    test: &PredictionRecord,
    calib: &SymmetricCalibration,
    spec: &ScoreSpec,
) -> Result<Interval> {
    if *spec != calib.spec {
        return Err(Error::SpecMismatch);
    }
    let band = adjustment_points(test, spec)?;
    Ok(Interval { lo: band.lo - calib.q, hi: band.hi + calib.q })
}

/// `[f_lo − q_lo, f_hi + q_hi]`.
pub fn predict_interval_asymmetric(
    test: &PredictionRecord,
    calib: &AsymmetricCalibration,
    spec: &ScoreSpec,
) -> Result<Interval> {
    if *spec != calib.spec {
        return Err(Error::SpecMismatch);
    }
    let band = adjustment_points(test, spec)?;
    Ok(Interval { lo: band.lo - calib.q_lo, hi: band.hi + calib.q_hi })
}

/// Fraction of tests whose truth lies in the closed interval.
pub fn empirical_coverage(tests: &[PredictionRecord], intervals: &[Interval]) -> Result<f64> {
    if tests.len() != intervals.len() {
        return Err(Error::LengthMismatch { left: tests.len(), right: intervals.len() });
    }
    if tests.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let hits = tests.iter().zip(intervals).filter(|(t, iv)| iv.contains(t.y_true())).count();
    Ok(hits as f64 / tests.len() as f64)
}

/// Every prediction payload moved by `b`.
pub fn shift_records(records: &[PredictionRecord], b: f64) -> Vec<PredictionRecord> {
    records.iter().map(|r| r.shifted(b)).collect()
}
