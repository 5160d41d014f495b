//! Split conformal prediction intervals for biased regressors.
//!
//! Predictions that sit a constant offset away from the truth inflate
//! symmetric conformal intervals by up to twice the offset, while intervals
//! built from separate lower and upper adjustments keep the same length no
//! matter the offset. This crate provides:
//!
//! - [`scores`]: L1 and CQR non-conformity scores in symmetric and signed
//!   (lower, upper) form.
//! - [`quantile`]: the finite-sample conformal order statistic.
//! - [`calibration`]: fitting, interval construction and coverage.
//! - [`bias`]: effective-bias estimation by minimising the worst symmetric
//!   calibration length, plus a brute-force grid minimiser.
//! - [`timeseries`]: sliding-window recalibration for drifting series.
//! - [`synthgen`]: seeded Gaussian/Weibull fixtures and a weather-like series.
//! - [`io`], [`experiments`], [`verify`]: CSV formats, experiment drivers and
//!   the property runner used by the `cbias` command line tool.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bias;
pub mod calibration;
pub mod error;
pub mod experiments;
pub mod io;
pub mod quantile;
pub mod scores;
pub mod synthgen;
pub mod timeseries;
pub mod verify;

pub use calibration::{
    empirical_coverage, fit_asymmetric, fit_symmetric, predict_interval_asymmetric, predict_interval_symmetric,
    shift_records, AsymmetricCalibration, Interval, SymmetricCalibration,
};
pub use error::{Error, Result};
pub use quantile::{conformal_quantile, effective_alpha, ConformalQuantile, MiscoverageSpec};
pub use scores::{Band, Prediction, PredictionRecord, ScorePair, ScoreSpec};

/// Tool version embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
