//! Non-conformity scores in canonical form.
//!
//! Both supported families reduce a prediction payload to a band
//! `[f_lo, f_hi]`: a point prediction gives `f_lo = f_hi = ŷ` (L1) and a
//! sample set gives two inner empirical quantiles (CQR). The symmetric score
//! is `max(f_lo − y, y − f_hi)` and the signed pair is `(f_lo − y, y − f_hi)`.

use serde::{Deserialize, Serialize};

use crate::error::{probability, Error, Result};
use crate::quantile::{plain_rank, select_kth};

/// Model output for one unit: a point estimate or a set of sampled predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Point(f64),
    Samples(Vec<f64>),
}

/// One calibration or test unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    y_true: f64,
    prediction: Prediction,
}

impl PredictionRecord {
    pub fn point(y_true: f64, y_pred: f64) -> Result<Self> {
        if !y_true.is_finite() || !y_pred.is_finite() {
            return Err(Error::NonFinite { context: "point record" });
        }
        Ok(Self { y_true, prediction: Prediction::Point(y_pred) })
    }

    /// A single sample is rejected rather than silently treated as a point.
    pub fn samples(y_true: f64, samples: Vec<f64>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::TooFewSamples(samples.len()));
        }
        if !y_true.is_finite() || samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite { context: "sample record" });
        }
        Ok(Self { y_true, prediction: Prediction::Samples(samples) })
    }

    pub fn y_true(&self) -> f64 {
        self.y_true
    }

    pub fn prediction(&self) -> &Prediction {
        &self.prediction
    }

    pub fn is_point(&self) -> bool {
        matches!(self.prediction, Prediction::Point(_))
    }

    /// Mean of the prediction payload.
    pub fn prediction_mean(&self) -> f64 {
        match &self.prediction {
            Prediction::Point(p) => *p,
            Prediction::Samples(s) => s.iter().sum::<f64>() / s.len() as f64,
        }
    }

    /// Adds `b` to the point or to every sample. The truth is untouched.
    pub fn shifted(&self, b: f64) -> Self {
        let prediction = match &self.prediction {
            Prediction::Point(p) => Prediction::Point(p + b),
            Prediction::Samples(s) => Prediction::Samples(s.iter().map(|x| x + b).collect()),
        };
        Self { y_true: self.y_true, prediction }
    }
}

/// Which non-conformity family is in force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScoreSpec {
    L1,
    /// Band from the `inner_lo` and `1 − inner_hi` empirical quantiles of the samples.
    Cqr {
        inner_lo: f64,
        inner_hi: f64,
    },
}

impl ScoreSpec {
    pub fn cqr(inner_lo: f64, inner_hi: f64) -> Result<Self> {
        let spec = ScoreSpec::Cqr { inner_lo, inner_hi };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if let ScoreSpec::Cqr { inner_lo, inner_hi } = *self {
            probability("inner_lo", inner_lo)?;
            probability("inner_hi", inner_hi)?;
            if inner_lo + inner_hi >= 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "inner_lo + inner_hi must be < 1, got {}",
                    inner_lo + inner_hi
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScoreSpec::L1 => "l1",
            ScoreSpec::Cqr { .. } => "cqr",
        }
    }
}

/// Lower and upper adjustment points `(f_lo, f_hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Signed lower/upper scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub s_lo: f64,
    pub s_hi: f64,
}

impl ScorePair {
    pub fn symmetric(&self) -> f64 {
        self.s_lo.max(self.s_hi)
    }
}

/// `(f_lo, f_hi)` for a record under `spec`.
pub fn adjustment_points(rec: &PredictionRecord, spec: &ScoreSpec) -> Result<Band> {
    match (spec, &rec.prediction) {
        (ScoreSpec::L1, Prediction::Point(p)) => Ok(Band { lo: *p, hi: *p }),
        (ScoreSpec::Cqr { inner_lo, inner_hi }, Prediction::Samples(samples)) => {
            spec.validate()?;
            if samples.is_empty() {
                return Err(Error::Empty("sample list"));
            }
            let m = samples.len();
            let mut buf = samples.clone();
            let lo = select_kth(&mut buf, plain_rank(m, *inner_lo));
            let hi = select_kth(&mut buf, plain_rank(m, 1.0 - inner_hi));
            Ok(Band { lo, hi })
        }
        (ScoreSpec::L1, _) => Err(Error::PayloadMismatch { expected: "l1 (point prediction)" }),
        (ScoreSpec::Cqr { .. }, _) => Err(Error::PayloadMismatch { expected: "cqr (sample set)" }),
    }
}

/// Signed pair from a precomputed band.
#[inline]
pub fn pair_from_band(y_true: f64, band: Band) -> ScorePair {
    ScorePair { s_lo: band.lo - y_true, s_hi: y_true - band.hi }
}

/// `max(f_lo − y, y − f_hi)`; equals `|y − ŷ|` for L1.
pub fn symmetric_score(rec: &PredictionRecord, spec: &ScoreSpec) -> Result<f64> {
    asymmetric_score(rec, spec).map(|p| p.symmetric())
}

/// `(f_lo − y, y − f_hi)`.
pub fn asymmetric_score(rec: &PredictionRecord, spec: &ScoreSpec) -> Result<ScorePair> {
    Ok(pair_from_band(rec.y_true, adjustment_points(rec, spec)?))
}

/// A record reduced to its truth and band. Calibration works on these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandedRecord {
    pub y_true: f64,
    pub band: Band,
}

impl BandedRecord {
    #[inline]
    pub fn pair(&self) -> ScorePair {
        pair_from_band(self.y_true, self.band)
    }

    /// Band translated by `b`. Bit-identical to re-scoring a record whose
    /// payload was shifted by `b`, since order statistics commute with a
    /// monotone rounding of `x + b`.
    #[inline]
    pub fn shifted(&self, b: f64) -> Self {
        Self { y_true: self.y_true, band: Band { lo: self.band.lo + b, hi: self.band.hi + b } }
    }
}

/// Bands for a homogeneous record list.
pub fn banded(records: &[PredictionRecord], spec: &ScoreSpec) -> Result<Vec<BandedRecord>> {
    spec.validate()?;
    let band_of = |r: &PredictionRecord| adjustment_points(r, spec).map(|band| BandedRecord { y_true: r.y_true, band });
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        records.par_iter().map(band_of).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        records.iter().map(band_of).collect()
    }
}
