//! Effective-bias estimation.
//!
//! The objective is the largest symmetric interval length over the
//! calibration records after every prediction has been moved by `−c`:
//!
//! ```text
//! J(c) = max_i [ (f_hi,i − c) − (f_lo,i − c) + 2 q(c) ]
//! ```
//!
//! where `q(c)` is the symmetric conformal adjustment fitted on the same
//! shifted set. `q` is an order statistic of V-shaped functions of `c`, so `J`
//! is piecewise linear with slopes ±2 between kinks. [`estimate_bias`]
//! minimises it by subgradient descent with finite-difference subgradients;
//! [`grid_oracle`] scans it exhaustively.

use serde::{Deserialize, Serialize};

use crate::error::{probability, Error, Result};
use crate::quantile::{conformal_rank, rank_or_infinity, select_kth};
use crate::scores::{banded, BandedRecord, PredictionRecord, ScoreSpec};

/// Precomputed bands for repeated objective evaluations.
#[derive(Debug, Clone)]
pub struct BiasObjective {
    records: Vec<BandedRecord>,
    rank: usize,
}

impl BiasObjective {
    pub fn new(cal: &[PredictionRecord], spec: &ScoreSpec, alpha: f64) -> Result<Self> {
        probability("alpha", alpha)?;
        if cal.is_empty() {
            return Err(Error::Empty("calibration set"));
        }
        let records = banded(cal, spec)?;
        Ok(Self::from_banded(records, alpha))
    }

    pub(crate) fn from_banded(records: Vec<BandedRecord>, alpha: f64) -> Self {
        let rank = conformal_rank(records.len(), alpha);
        Self { records, rank }
    }

    /// `+∞` when the conformal rank exceeds the calibration size.
    pub fn eval(&self, c: f64) -> f64 {
        let shifted: Vec<BandedRecord> = self.records.iter().map(|r| r.shifted(-c)).collect();
        let mut scores: Vec<f64> = shifted.iter().map(|r| r.pair().symmetric()).collect();
        let q = rank_or_infinity(&mut scores, self.rank);
        if !q.is_finite() {
            return f64::INFINITY;
        }
        shifted.iter().map(|r| (r.band.hi + q) - (r.band.lo - q)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Central finite difference with `h = max(1e-4, 1e-6·|c|)`.
    pub fn subgradient(&self, c: f64) -> f64 {
        let h = finite_difference_step(c);
        (self.eval(c + h) - self.eval(c - h)) / (2.0 * h)
    }

    /// Global minimiser of [`eval`](Self::eval).
    ///
    /// Each symmetric score is `|c − m_j| − w_j/2` with `m_j` the band centre
    /// minus the truth and `w_j` the band width, so `q(c) <= ρ` exactly when
    /// `c` lies in at least `k` of the intervals `m_j ± (ρ + w_j/2)`. The
    /// smallest such `ρ` is found by bisection; the objective is then the
    /// largest width plus `2ρ`.
    pub fn exact_minimum(&self) -> GridMinimum {
        let n = self.records.len();
        if self.rank > n {
            return GridMinimum { b_star: 0.0, objective_star: f64::INFINITY };
        }
        let vs: Vec<(f64, f64)> =
            self.records.iter().map(|r| ((r.band.lo + r.band.hi) / 2.0 - r.y_true, r.band.width() / 2.0)).collect();
        let deepest = |rho: f64| -> Option<(f64, f64)> {
            let mut events: Vec<(f64, i32)> = Vec::with_capacity(2 * n);
            for &(m, half) in &vs {
                let r = rho + half;
                if r >= 0.0 {
                    events.push((m - r, -1));
                    events.push((m + r, 1));
                }
            }
            // closed intervals: openings sort before closings at equal positions
            events.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut depth = 0usize;
            for (idx, &(x, kind)) in events.iter().enumerate() {
                if kind < 0 {
                    depth += 1;
                    if depth >= self.rank {
                        let end = events[idx + 1..].iter().find(|e| e.1 > 0).map_or(x, |e| e.0);
                        return Some((x, end));
                    }
                } else {
                    depth -= 1;
                }
            }
            None
        };
        let mut lo = vs.iter().map(|v| -v.1).fold(f64::INFINITY, f64::min);
        let centre = {
            let mut ms: Vec<f64> = vs.iter().map(|v| v.0).collect();
            select_kth(&mut ms, n.div_ceil(2))
        };
        let mut hi = vs.iter().map(|v| (centre - v.0).abs() - v.1).fold(f64::NEG_INFINITY, f64::max);
        if deepest(lo).is_some() {
            hi = lo;
        }
        for _ in 0..200 {
            let mid = lo + (hi - lo) / 2.0;
            if mid <= lo || mid >= hi {
                break;
            }
            if deepest(mid).is_some() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let (a, b) = deepest(hi).expect("upper end is feasible");
        let c = a + (b - a) / 2.0;
        GridMinimum { b_star: c, objective_star: self.eval(c) }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn finite_difference_step(c: f64) -> f64 {
    (1e-6 * c.abs()).max(1e-4)
}

/// Largest symmetric calibration length after shifting predictions by `−c`.
pub fn objective(cal: &[PredictionRecord], spec: &ScoreSpec, alpha: f64, c: f64) -> Result<f64> {
    Ok(BiasObjective::new(cal, spec, alpha)?.eval(c))
}

/// Mean over records of (payload mean − truth).
pub fn mean_bias(cal: &[PredictionRecord]) -> Result<f64> {
    if cal.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    Ok(cal.iter().map(|r| r.prediction_mean() - r.y_true()).sum::<f64>() / cal.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum BiasInit {
    MeanDifference,
    Zero,
    Explicit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    /// Fixed step `γ` every iteration.
    Constant,
    /// `γ` for the first `flat_iterations`, then `γ/√(k − flat + 1)`.
    /// With `halve_on_reversal`, the step is additionally halved every time
    /// the subgradient changes sign.
    Diminishing { flat_iterations: usize, halve_on_reversal: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub init: BiasInit,
    pub schedule: StepSchedule,
    /// Replace the descent result by the exact global minimiser when the
    /// latter is lower. The objective is not convex, so descent can stop in
    /// a local minimum.
    pub refine: bool,
    pub keep_trace: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            tolerance: 1e-8,
            max_iterations: 10_000,
            init: BiasInit::MeanDifference,
            schedule: StepSchedule::Diminishing { flat_iterations: 10, halve_on_reversal: true },
            refine: true,
            keep_trace: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning rate {}", self.learning_rate)));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidParameter(format!("tolerance {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be >= 1".into()));
        }
        if let BiasInit::Explicit(b) = self.init {
            if !b.is_finite() {
                return Err(Error::NonFinite { context: "initial bias" });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimate {
    pub b_eff: f64,
    pub iterations: usize,
    pub final_objective: f64,
    pub converged: bool,
    /// Set when the exact minimiser replaced the descent result.
    pub refined: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<(f64, f64)>>,
}

pub fn estimate_bias(
    cal: &[PredictionRecord],
    spec: &ScoreSpec,
    alpha: f64,
    config: &OptimizerConfig,
) -> Result<BiasEstimate> {
    config.validate()?;
    let obj = BiasObjective::new(cal, spec, alpha)?;
    let init = match config.init {
        BiasInit::MeanDifference => mean_bias(cal)?,
        BiasInit::Zero => 0.0,
        BiasInit::Explicit(b) => b,
    };
    descend(&obj, init, config)
}

/// Subgradient descent on a prepared objective, stopping when consecutive
/// objective values differ by less than the tolerance.
pub fn descend(obj: &BiasObjective, init: f64, config: &OptimizerConfig) -> Result<BiasEstimate> {
    config.validate()?;
    let mut b = init;
    let mut l = obj.eval(b);
    if !l.is_finite() {
        return Err(Error::InfiniteObjective { init });
    }
    let mut trace = config.keep_trace.then(Vec::new);
    let mut best = (b, l);
    let mut l_prev = f64::INFINITY;
    let mut prev_grad = 0.0f64;
    let mut reversal_factor = 1.0f64;
    let mut iterations = 0usize;
    let mut converged = false;

    loop {
        if let Some(t) = trace.as_mut() {
            t.push((b, l));
        }
        if l < best.1 {
            best = (b, l);
        }
        if (l_prev - l).abs() < config.tolerance {
            converged = true;
            break;
        }
        if iterations == config.max_iterations {
            break;
        }
        let g = obj.subgradient(b);
        let step = match config.schedule {
            StepSchedule::Constant => config.learning_rate,
            StepSchedule::Diminishing { flat_iterations, halve_on_reversal } => {
                if halve_on_reversal && g * prev_grad < 0.0 {
                    reversal_factor *= 0.5;
                }
                let decay = if iterations < flat_iterations {
                    1.0
                } else {
                    1.0 / ((iterations - flat_iterations + 1) as f64).sqrt()
                };
                config.learning_rate * decay * reversal_factor
            }
        };
        if g != 0.0 {
            prev_grad = g;
        }
        b -= step * g;
        l_prev = l;
        l = obj.eval(b);
        iterations += 1;
    }

    let mut refined = false;
    if config.refine {
        let exact = obj.exact_minimum();
        if exact.objective_star < best.1 - 1e-12 {
            best = (exact.b_star, exact.objective_star);
            refined = true;
        }
    }

    Ok(BiasEstimate { b_eff: best.0, iterations, final_objective: best.1, converged, refined, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMinimum {
    pub b_star: f64,
    pub objective_star: f64,
}

/// Exhaustive scan of `lo, lo + step, …, hi`. Ties within 1e-12 of the
/// minimum resolve to the smallest `b`.
pub fn grid_oracle(
    cal: &[PredictionRecord],
    spec: &ScoreSpec,
    alpha: f64,
    lo: f64,
    hi: f64,
    step: f64,
) -> Result<GridMinimum> {
    scan(&BiasObjective::new(cal, spec, alpha)?, lo, hi, step)
}

/// Coarse scan over `[lo, hi]`, then a fine scan of `±coarse` around the
/// coarse minimiser.
pub fn refined_grid_oracle(
    cal: &[PredictionRecord],
    spec: &ScoreSpec,
    alpha: f64,
    lo: f64,
    hi: f64,
    coarse: f64,
    fine: f64,
) -> Result<GridMinimum> {
    let obj = BiasObjective::new(cal, spec, alpha)?;
    let first = scan(&obj, lo, hi, coarse)?;
    scan(&obj, first.b_star - coarse, first.b_star + coarse, fine)
}

pub fn scan(obj: &BiasObjective, lo: f64, hi: f64, step: f64) -> Result<GridMinimum> {
    if !(lo < hi) || !(step > 0.0) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!("grid {lo}:{hi}:{step}")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    let point = |j: usize| lo + j as f64 * step;
    let values: Vec<f64> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..count).into_par_iter().map(|j| obj.eval(point(j))).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..count).map(|j| obj.eval(point(j))).collect()
        }
    };
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let j = values.iter().position(|&v| v <= min + 1e-12).unwrap_or(0);
    Ok(GridMinimum { b_star: point(j), objective_star: values[j] })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_shift(b: f64, n: usize) -> Vec<PredictionRecord> {
        (0..n)
            .map(|i| {
                let y = (i as f64 * 0.7).cos() * 3.0 + i as f64 * 0.01;
                PredictionRecord::point(y, y + b).unwrap()
            })
            .collect()
    }

    #[test]
    fn exact_shift_objective_is_translated_abs() {
        let cal = exact_shift(3.0, 50);
        let obj = BiasObjective::new(&cal, &ScoreSpec::L1, 0.1).unwrap();
        for c in [-2.0f64, 0.0, 1.0, 2.5, 3.0, 3.5, 7.0] {
            let expected = 2.0 * (3.0 - c).abs();
            assert!((obj.eval(c) - expected).abs() < 1e-9, "c={c}");
        }
        for c in [0.0, 2.0, 4.0, 5.5] {
            let diff = obj.eval(c) - obj.eval(3.0);
            assert!((diff - 2.0 * (3.0 - c).abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn subgradient_is_two_away_from_optimum() {
        let cal = exact_shift(3.0, 30);
        let obj = BiasObjective::new(&cal, &ScoreSpec::L1, 0.1).unwrap();
        for c in [-4.0, 0.0, 2.9] {
            assert!((obj.subgradient(c) + 2.0).abs() < 1e-6);
        }
        for c in [3.1, 10.0] {
            assert!((obj.subgradient(c) - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn mean_bias_examples() {
        let same: Vec<_> = (0..5).map(|i| PredictionRecord::point(i as f64, i as f64).unwrap()).collect();
        assert_eq!(mean_bias(&same).unwrap(), 0.0);
        assert!((mean_bias(&exact_shift(3.0, 10)).unwrap() - 3.0).abs() < 1e-12);
        let pm: Vec<_> =
            (0..6).map(|i| PredictionRecord::point(1.0, if i % 2 == 0 { 2.0 } else { 0.0 }).unwrap()).collect();
        assert_eq!(mean_bias(&pm).unwrap(), 0.0);
        let s = vec![PredictionRecord::samples(1.0, vec![1.0, 2.0, 3.0]).unwrap()];
        assert_eq!(mean_bias(&s).unwrap(), 1.0);
        assert!(mean_bias(&[]).is_err());
    }

    #[test]
    fn descends_to_exact_shift_from_zero() {
        let cal = exact_shift(3.0, 40);
        for schedule in
            [StepSchedule::Constant, StepSchedule::Diminishing { flat_iterations: 10, halve_on_reversal: true }]
        {
            let cfg = OptimizerConfig { init: BiasInit::Zero, schedule, keep_trace: true, ..Default::default() };
            let est = estimate_bias(&cal, &ScoreSpec::L1, 0.1, &cfg).unwrap();
            assert!((est.b_eff - 3.0).abs() < 1e-3, "{schedule:?}: {}", est.b_eff);
            // a fixed step keeps bouncing across the kink; only the best point is reliable
            if matches!(schedule, StepSchedule::Diminishing { .. }) {
                assert!(est.converged);
            }
            let obj = objective(&cal, &ScoreSpec::L1, 0.1, est.b_eff).unwrap();
            assert_eq!(obj, est.final_objective);
            let trace = est.trace.unwrap();
            assert_eq!(trace.len(), est.iterations + 1);
        }
    }

    #[test]
    fn mean_init_on_exact_shift_stops_immediately() {
        let cal = exact_shift(-1.25, 20);
        let est = estimate_bias(&cal, &ScoreSpec::L1, 0.2, &OptimizerConfig::default()).unwrap();
        assert!((est.b_eff + 1.25).abs() < 1e-9);
        assert!(est.converged);
        assert!(est.iterations <= 2);
    }

    #[test]
    fn degenerate_alpha_is_rejected_at_init() {
        let cal = exact_shift(1.0, 5);
        let err = estimate_bias(&cal, &ScoreSpec::L1, 0.01, &OptimizerConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InfiniteObjective { .. }));
    }

    #[test]
    fn non_convergence_reports_best_seen() {
        let cal = exact_shift(3.0, 20);
        let cfg = OptimizerConfig {
            init: BiasInit::Explicit(-5.0),
            max_iterations: 3,
            schedule: StepSchedule::Constant,
            refine: false,
            ..Default::default()
        };
        let est = estimate_bias(&cal, &ScoreSpec::L1, 0.1, &cfg).unwrap();
        assert!(!est.converged);
        assert_eq!(est.iterations, 3);
        assert!((est.b_eff - (-5.0 + 3.0 * 0.2)).abs() < 1e-9);
        assert!(!est.refined);
    }

    #[test]
    fn exact_minimum_matches_dense_scan() {
        // irregular residuals and band widths
        let cal: Vec<_> = (0..37)
            .map(|i| {
                let x = i as f64;
                let y = (x * 1.3).sin() * 4.0;
                let centre = y + (x * 0.37).cos() * 2.0 + 0.5;
                let half = 0.2 + ((x * 2.1).sin() + 1.0) * 0.5;
                PredictionRecord::samples(y, vec![centre - half, centre, centre + half]).unwrap()
            })
            .collect();
        let spec = ScoreSpec::cqr(0.05, 0.05).unwrap();
        for alpha in [0.05, 0.2, 0.5] {
            let obj = BiasObjective::new(&cal, &spec, alpha).unwrap();
            let exact = obj.exact_minimum();
            let grid = scan(&obj, -6.0, 6.0, 1e-4).unwrap();
            assert!(exact.objective_star <= grid.objective_star + 1e-9, "alpha {alpha}: {exact:?} {grid:?}");
            assert!(grid.objective_star - exact.objective_star < 2.1e-4);
            assert_eq!(exact.objective_star, obj.eval(exact.b_star));
        }
    }

    #[test]
    fn refinement_escapes_a_local_minimum() {
        // L1 residuals with rank 2: the objective is twice the half-width of
        // the tightest pair around c, with local minima at 0.05 (pair 0, 0.1)
        // and 0.52 (pair 0.5, 0.54, the global one)
        let cal: Vec<_> = [0.0, 0.1, 0.5, 0.54].iter().map(|&r| PredictionRecord::point(0.0, r).unwrap()).collect();
        let alpha = 0.65;
        let plain = OptimizerConfig { init: BiasInit::Zero, refine: false, ..Default::default() };
        let a = estimate_bias(&cal, &ScoreSpec::L1, alpha, &plain).unwrap();
        assert!(a.b_eff < 0.3 && a.final_objective >= 0.1 - 1e-9, "{a:?}");
        let b = estimate_bias(&cal, &ScoreSpec::L1, alpha, &OptimizerConfig { refine: true, ..plain }).unwrap();
        assert!(b.refined);
        assert!((b.b_eff - 0.52).abs() < 1e-4, "{}", b.b_eff);
        assert!((b.final_objective - 0.04).abs() < 1e-4);
    }

    #[test]
    fn grid_finds_exact_shift() {
        let cal = exact_shift(3.0, 25);
        let g = grid_oracle(&cal, &ScoreSpec::L1, 0.1, 0.0, 5.0, 0.5).unwrap();
        assert_eq!(g.b_star, 3.0);
        assert_eq!(g.objective_star, objective(&cal, &ScoreSpec::L1, 0.1, g.b_star).unwrap());
    }

    #[test]
    fn grid_ties_resolve_to_smallest() {
        // residuals -1 and +1 at rank 1: J(c) = 2 min(|1 + c|, |1 - c|), zero at c = ±1
        let cal = vec![PredictionRecord::point(0.0, -1.0).unwrap(), PredictionRecord::point(0.0, 1.0).unwrap()];
        let obj = BiasObjective::new(&cal, &ScoreSpec::L1, 0.9).unwrap();
        assert_eq!(obj.rank, 1);
        let g = scan(&obj, -3.0, 3.0, 0.25).unwrap();
        assert_eq!(g.b_star, -1.0);
        assert_eq!(g.objective_star, 0.0);
    }

    #[test]
    fn grid_rejects_bad_ranges() {
        let cal = exact_shift(0.0, 5);
        assert!(grid_oracle(&cal, &ScoreSpec::L1, 0.5, 1.0, 1.0, 0.1).is_err());
        assert!(grid_oracle(&cal, &ScoreSpec::L1, 0.5, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = OptimizerConfig { learning_rate: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig { max_iterations: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
