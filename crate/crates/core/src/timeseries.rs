//! Sliding-window conformal prediction over drifting series.
//!
//! Each step `t` past the warmup is calibrated on the L1 scores of the `K`
//! steps immediately before it, all weighted equally, which is plain split
//! conformal on that window. The naive mode calibrates once on the first `K`
//! steps and never refits.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::calibration::Interval;
use crate::error::{Error, Result};
use crate::quantile::{conformal_rank, rank_or_infinity, MiscoverageSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t: u64,
    pub y_true: f64,
    pub y_pred: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    WindowedSymmetric,
    WindowedAsymmetric,
    NaiveGlobalSymmetric,
}

impl WindowMode {
    pub const ALL: [WindowMode; 3] =
        [WindowMode::WindowedSymmetric, WindowMode::WindowedAsymmetric, WindowMode::NaiveGlobalSymmetric];

    pub fn name(self) -> &'static str {
        match self {
            WindowMode::WindowedSymmetric => "windowed_symmetric",
            WindowMode::WindowedAsymmetric => "windowed_asymmetric",
            WindowMode::NaiveGlobalSymmetric => "naive_global_symmetric",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window: usize,
    pub alpha: f64,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub mode: WindowMode,
    pub warmup: usize,
}

impl WindowConfig {
    /// Warmup equal to the window.
    pub fn new(window: usize, alpha: f64, mode: WindowMode) -> Self {
        Self { window, alpha, alpha_lo: alpha / 2.0, alpha_hi: alpha / 2.0, mode, warmup: window }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidParameter("window must be >= 1".into()));
        }
        if self.warmup < self.window {
            return Err(Error::InvalidParameter(format!("warmup {} shorter than window {}", self.warmup, self.window)));
        }
        match self.mode {
            WindowMode::WindowedAsymmetric => {
                MiscoverageSpec::Asymmetric { alpha_lo: self.alpha_lo, alpha_hi: self.alpha_hi }.validate()
            }
            _ => MiscoverageSpec::Symmetric { alpha: self.alpha }.validate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub t: u64,
    pub interval: Interval,
    pub covered: bool,
    pub length: f64,
    pub rolling_coverage: f64,
    pub degenerate: bool,
}

/// `y_pred(t) += rate · t`.
pub fn inject_drift(series: &[SeriesPoint], rate: f64) -> Vec<SeriesPoint> {
    series.iter().map(|p| SeriesPoint { y_pred: p.y_pred + rate * p.t as f64, ..*p }).collect()
}

fn validate_series(series: &[SeriesPoint]) -> Result<()> {
    if series.iter().any(|p| !p.y_true.is_finite() || !p.y_pred.is_finite()) {
        return Err(Error::NonFinite { context: "series" });
    }
    if series.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(Error::Format("series steps must be strictly increasing".into()));
    }
    Ok(())
}

/// Per-step intervals for every step from `warmup` on.
pub fn run_windowed(series: &[SeriesPoint], config: &WindowConfig) -> Result<Vec<StepResult>> {
    config.validate()?;
    validate_series(series)?;
    if series.len() <= config.warmup {
        return Err(Error::SeriesTooShort { len: series.len(), needed: config.warmup });
    }
    let k = config.window;
    // signed residuals r = ŷ − y; the L1 pair is (r, −r) and the score |r|
    let residual: Vec<f64> = series.iter().map(|p| p.y_pred - p.y_true).collect();
    let rank_sym = conformal_rank(k, config.alpha);
    let rank_lo = conformal_rank(k, config.alpha_lo);
    let rank_hi = conformal_rank(k, config.alpha_hi);

    let naive_q = match config.mode {
        WindowMode::NaiveGlobalSymmetric => {
            let mut s: Vec<f64> = residual[..k].iter().map(|r| r.abs()).collect();
            Some(rank_or_infinity(&mut s, rank_sym))
        }
        _ => None,
    };

    let mut buf = Vec::with_capacity(k);
    let mut recent: VecDeque<bool> = VecDeque::with_capacity(k);
    let mut hits = 0usize;
    let mut out = Vec::with_capacity(series.len() - config.warmup);

    for i in config.warmup..series.len() {
        let window = &residual[i - k..i];
        let p = series[i];
        let interval = match config.mode {
            WindowMode::NaiveGlobalSymmetric => {
                let q = naive_q.expect("fitted above");
                Interval { lo: p.y_pred - q, hi: p.y_pred + q }
            }
            WindowMode::WindowedSymmetric => {
                buf.clear();
                buf.extend(window.iter().map(|r| r.abs()));
                let q = rank_or_infinity(&mut buf, rank_sym);
                Interval { lo: p.y_pred - q, hi: p.y_pred + q }
            }
            WindowMode::WindowedAsymmetric => {
                buf.clear();
                buf.extend_from_slice(window);
                let q_lo = rank_or_infinity(&mut buf, rank_lo);
                buf.clear();
                buf.extend(window.iter().map(|r| -r));
                let q_hi = rank_or_infinity(&mut buf, rank_hi);
                Interval { lo: p.y_pred - q_lo, hi: p.y_pred + q_hi }
            }
        };
        let covered = interval.contains(p.y_true);
        recent.push_back(covered);
        hits += covered as usize;
        if recent.len() > k {
            hits -= recent.pop_front().expect("non-empty") as usize;
        }
        out.push(StepResult {
            t: p.t,
            interval,
            covered,
            length: interval.length(),
            rolling_coverage: hits as f64 / recent.len() as f64,
            degenerate: interval.is_degenerate(),
        });
    }
    Ok(out)
}

/// `(rate · t, length)` for each emitted step.
pub fn length_vs_bias_profile(results: &[StepResult], drift_rate: f64) -> Vec<(f64, f64)> {
    results.iter().map(|r| (drift_rate * r.t as f64, r.length)).collect()
}

/// Least-squares slope of `y` on `x`. `None` with fewer than two distinct `x`.
pub fn ols_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}
