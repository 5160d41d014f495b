//! Experiment drivers behind the command line tool: bias sweeps,
//! leave-one-group-out length tables and drifting-series runs.

use serde::{Deserialize, Serialize};

use crate::bias::{estimate_bias, BiasEstimate, OptimizerConfig};
use crate::calibration::{fit_asymmetric_banded, fit_symmetric_banded, Interval};
use crate::error::{Error, Result};
use crate::io::Dataset;
use crate::quantile::MiscoverageSpec;
use crate::scores::{banded, BandedRecord, PredictionRecord, ScoreSpec};
use crate::timeseries::{
    inject_drift, length_vs_bias_profile, ols_slope, run_windowed, SeriesPoint, StepResult, WindowConfig, WindowMode,
};
use crate::VERSION;

pub const SCHEMA: u32 = 1;

fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Inclusive bias grid `lo, lo + step, …, hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl BiasGrid {
    /// Parses `lo:hi:step`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidParameter(format!("bias grid {s:?}, expected lo:hi:step"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let v: Vec<f64> =
            parts.iter().map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
        let grid = BiasGrid { lo: v[0], hi: v[1], step: v[2] };
        grid.points()?;
        Ok(grid)
    }

    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.lo <= self.hi) || !(self.step > 0.0) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::InvalidParameter(format!("bias grid {}:{}:{}", self.lo, self.hi, self.step)));
        }
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..count)
            .map(|j| {
                let b = self.lo + j as f64 * self.step;
                if b.abs() < self.step * 1e-9 {
                    0.0
                } else {
                    b
                }
            })
            .collect())
    }
}

impl Default for BiasGrid {
    fn default() -> Self {
        Self { lo: -2.0, hi: 2.0, step: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub spec: ScoreSpec,
    pub alpha: f64,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub grid: BiasGrid,
    pub optimizer: OptimizerConfig,
    /// Remove the estimated bias before sweeping.
    pub debias: bool,
}

impl SweepConfig {
    pub fn new(spec: ScoreSpec) -> Self {
        Self {
            spec,
            alpha: 0.1,
            alpha_lo: 0.05,
            alpha_hi: 0.05,
            grid: BiasGrid::default(),
            optimizer: OptimizerConfig::default(),
            debias: true,
        }
    }

    fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        MiscoverageSpec::Symmetric { alpha: self.alpha }.validate()?;
        MiscoverageSpec::Asymmetric { alpha_lo: self.alpha_lo, alpha_hi: self.alpha_hi }.validate()?;
        self.optimizer.validate()?;
        self.grid.points().map(|_| ())
    }
}

/// Lengths and coverage of both modes on a test set for one bias value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeLengths {
    pub l_sym_max: f64,
    pub l_asym_max: f64,
    pub coverage_sym: f64,
    pub coverage_asym: f64,
    pub degenerate_sym: bool,
    pub degenerate_asym: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub b: f64,
    pub l_sym_max: f64,
    pub l_asym_max: f64,
    /// `L_sym_max(0) + 2|b|`.
    pub bound: f64,
    /// `2|b| >= L_asym_max(0) − L_sym_max(0)`.
    pub crossover_flag: bool,
    /// Observed `L_asym_max(b) <= L_sym_max(b)`.
    pub asym_not_longer: bool,
    pub coverage_sym: f64,
    pub coverage_asym: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema: u32,
    pub version: String,
    pub config: SweepConfig,
    /// Where the data came from (synthetic config or file paths).
    pub source: serde_json::Value,
    pub bias_estimate: Option<BiasEstimate>,
    pub reference: ModeLengths,
    pub rows: Vec<SweepRow>,
}

/// Fits both modes on `cal` and measures them on `test`, with every
/// prediction moved by `shift`.
pub fn evaluate_modes(
    cal: &[BandedRecord],
    test: &[BandedRecord],
    spec: &ScoreSpec,
    alpha: f64,
    alpha_lo: f64,
    alpha_hi: f64,
    shift: f64,
) -> Result<ModeLengths> {
    let cal: Vec<BandedRecord> = cal.iter().map(|r| r.shifted(shift)).collect();
    let sym = fit_symmetric_banded(&cal, spec, alpha)?;
    let asym = fit_asymmetric_banded(&cal, spec, alpha_lo, alpha_hi)?;
    let mut out = ModeLengths {
        l_sym_max: f64::NEG_INFINITY,
        l_asym_max: f64::NEG_INFINITY,
        coverage_sym: 0.0,
        coverage_asym: 0.0,
        degenerate_sym: sym.degenerate,
        degenerate_asym: asym.degenerate,
    };
    let (mut hit_s, mut hit_a) = (0usize, 0usize);
    for t in test {
        let t = t.shifted(shift);
        let s = Interval { lo: t.band.lo - sym.q, hi: t.band.hi + sym.q };
        let a = Interval { lo: t.band.lo - asym.q_lo, hi: t.band.hi + asym.q_hi };
        out.l_sym_max = out.l_sym_max.max(raw_or_inf(&s));
        out.l_asym_max = out.l_asym_max.max(raw_or_inf(&a));
        hit_s += s.contains(t.y_true) as usize;
        hit_a += a.contains(t.y_true) as usize;
    }
    out.coverage_sym = hit_s as f64 / test.len() as f64;
    out.coverage_asym = hit_a as f64 / test.len() as f64;
    Ok(out)
}

fn raw_or_inf(iv: &Interval) -> f64 {
    if iv.is_degenerate() {
        f64::INFINITY
    } else {
        iv.raw_length()
    }
}

pub fn run_sweep(
    cal: &[PredictionRecord],
    test: &[PredictionRecord],
    config: &SweepConfig,
    source: serde_json::Value,
) -> Result<SweepReport> {
    config.validate()?;
    if cal.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let spec = config.spec;
    let bias_estimate = if config.debias {
        match estimate_bias(cal, &spec, config.alpha, &config.optimizer) {
            Ok(e) => Some(e),
            Err(Error::InfiniteObjective { .. }) => {
                log::warn!("symmetric calibration is degenerate; sweeping without debiasing");
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let b_eff = bias_estimate.as_ref().map_or(0.0, |e| e.b_eff);
    let debias = |r: BandedRecord| r.shifted(-b_eff);
    let cal_b: Vec<_> = banded(cal, &spec)?.into_iter().map(debias).collect();
    let test_b: Vec<_> = banded(test, &spec)?.into_iter().map(debias).collect();

    let eval = |b: f64| evaluate_modes(&cal_b, &test_b, &spec, config.alpha, config.alpha_lo, config.alpha_hi, b);
    let reference = eval(0.0)?;
    let points = config.grid.points()?;
    let rows = par_map(&points, |&b| {
        eval(b).map(|m| SweepRow {
            b,
            l_sym_max: m.l_sym_max,
            l_asym_max: m.l_asym_max,
            bound: reference.l_sym_max + 2.0 * b.abs(),
            crossover_flag: 2.0 * b.abs() >= reference.l_asym_max - reference.l_sym_max,
            asym_not_longer: m.l_asym_max <= m.l_sym_max,
            coverage_sym: m.coverage_sym,
            coverage_asym: m.coverage_asym,
            degenerate: m.degenerate_sym || m.degenerate_asym,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    Ok(SweepReport {
        schema: SCHEMA,
        version: VERSION.to_string(),
        config: *config,
        source,
        bias_estimate,
        reference,
        rows,
    })
}

pub fn sweep_csv<W: std::io::Write>(writer: W, report: &SweepReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "b",
        "l_sym_max",
        "l_asym_max",
        "bound",
        "crossover_flag",
        "asym_not_longer",
        "coverage_sym",
        "coverage_asym",
        "degenerate",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.b.to_string(),
            r.l_sym_max.to_string(),
            r.l_asym_max.to_string(),
            r.bound.to_string(),
            (r.crossover_flag as u8).to_string(),
            (r.asym_not_longer as u8).to_string(),
            r.coverage_sym.to_string(),
            r.coverage_asym.to_string(),
            (r.degenerate as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableConfig {
    pub spec: ScoreSpec,
    pub alpha: f64,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub optimizer: OptimizerConfig,
}

impl TableConfig {
    /// Low-n defaults: symmetric 0.15, asymmetric 0.075 per side.
    pub fn new(spec: ScoreSpec) -> Self {
        Self { spec, alpha: 0.15, alpha_lo: 0.075, alpha_hi: 0.075, optimizer: OptimizerConfig::default() }
    }
}

/// One metric's leave-one-group-out summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub metric: String,
    /// Mean over folds of the effective bias fitted on the retained groups.
    pub b_eff: f64,
    /// Mean over held-out records of `L_asym − L_sym`.
    pub mean_length_diff: f64,
    /// Fraction of held-out records with `L_asym <= L_sym`.
    pub p_asym_le_sym: f64,
    /// Whether `2|b_eff| >= L_asym(0) − L_sym(0)` holds in at least half the folds.
    pub crossover_condition: bool,
    pub folds: usize,
    pub n_test: usize,
    pub degenerate_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    pub schema: u32,
    pub version: String,
    pub config: TableConfig,
    pub rows: Vec<TableRow>,
}

struct FoldOutcome {
    b_eff: f64,
    diffs: Vec<f64>,
    condition: bool,
    degenerate: bool,
}

fn fold(cal: &[PredictionRecord], test: &[PredictionRecord], config: &TableConfig) -> Result<FoldOutcome> {
    let spec = config.spec;
    let est = estimate_bias(cal, &spec, config.alpha, &config.optimizer)?;
    let cal_b = banded(cal, &spec)?;
    let test_b = banded(test, &spec)?;
    let sym = fit_symmetric_banded(&cal_b, &spec, config.alpha)?;
    let asym = fit_asymmetric_banded(&cal_b, &spec, config.alpha_lo, config.alpha_hi)?;
    let diffs = test_b
        .iter()
        .map(|t| {
            let ls = raw_or_inf(&Interval { lo: t.band.lo - sym.q, hi: t.band.hi + sym.q });
            let la = raw_or_inf(&Interval { lo: t.band.lo - asym.q_lo, hi: t.band.hi + asym.q_hi });
            la - ls
        })
        .collect();
    // unbiased reference lengths: everything moved by −b_eff
    let reference = evaluate_modes(&cal_b, &test_b, &spec, config.alpha, config.alpha_lo, config.alpha_hi, -est.b_eff)?;
    let unbiased_gap = mean_gap(&cal_b, &test_b, config, -est.b_eff)?;
    Ok(FoldOutcome {
        b_eff: est.b_eff,
        diffs,
        condition: 2.0 * est.b_eff.abs() >= unbiased_gap,
        degenerate: reference.degenerate_asym || reference.degenerate_sym,
    })
}

/// Mean over test records of `L_asym − L_sym` with predictions moved by `shift`.
fn mean_gap(cal: &[BandedRecord], test: &[BandedRecord], config: &TableConfig, shift: f64) -> Result<f64> {
    let cal: Vec<_> = cal.iter().map(|r| r.shifted(shift)).collect();
    let sym = fit_symmetric_banded(&cal, &config.spec, config.alpha)?;
    let asym = fit_asymmetric_banded(&cal, &config.spec, config.alpha_lo, config.alpha_hi)?;
    let total: f64 = test
        .iter()
        .map(|t| {
            let t = t.shifted(shift);
            raw_or_inf(&Interval { lo: t.band.lo - asym.q_lo, hi: t.band.hi + asym.q_hi })
                - raw_or_inf(&Interval { lo: t.band.lo - sym.q, hi: t.band.hi + sym.q })
        })
        .sum();
    Ok(total / test.len() as f64)
}

/// Leave-one-group-out over `data`. Without a group column each record is
/// its own group.
pub fn run_table(metric: &str, data: &Dataset, config: &TableConfig) -> Result<TableRow> {
    config.spec.validate()?;
    config.optimizer.validate()?;
    let labels: Vec<String> = match &data.groups {
        Some(g) => g.clone(),
        None => (0..data.records.len()).map(|i| i.to_string()).collect(),
    };
    let mut order: Vec<&str> = Vec::new();
    for l in &labels {
        if !order.contains(&l.as_str()) {
            order.push(l);
        }
    }
    if order.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "metric {metric}: leave-one-out needs at least 3 groups, got {}",
            order.len()
        )));
    }
    let outcomes = par_map(&order, |&held_out| {
        let (mut cal, mut test) = (Vec::new(), Vec::new());
        for (r, l) in data.records.iter().zip(&labels) {
            if l == held_out {
                test.push(r.clone());
            } else {
                cal.push(r.clone());
            }
        }
        fold(&cal, &test, config)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let diffs: Vec<f64> = outcomes.iter().flat_map(|o| o.diffs.iter().copied()).collect();
    let folds = outcomes.len();
    Ok(TableRow {
        metric: metric.to_string(),
        b_eff: outcomes.iter().map(|o| o.b_eff).sum::<f64>() / folds as f64,
        mean_length_diff: diffs.iter().sum::<f64>() / diffs.len() as f64,
        p_asym_le_sym: diffs.iter().filter(|&&d| d <= 0.0).count() as f64 / diffs.len() as f64,
        crossover_condition: 2 * outcomes.iter().filter(|o| o.condition).count() >= folds,
        folds,
        n_test: diffs.len(),
        degenerate_folds: outcomes.iter().filter(|o| o.degenerate).count(),
    })
}

pub fn table_csv<W: std::io::Write>(writer: W, report: &TableReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["metric", "b_eff", "mean_length_diff", "p_asym_le_sym", "crossover_condition", "folds", "n_test"])?;
    for r in &report.rows {
        w.write_record([
            r.metric.clone(),
            r.b_eff.to_string(),
            r.mean_length_diff.to_string(),
            r.p_asym_le_sym.to_string(),
            (r.crossover_condition as u8).to_string(),
            r.folds.to_string(),
            r.n_test.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeseriesConfig {
    pub window: usize,
    pub alpha: f64,
    pub drift: f64,
    /// Defaults to the window size.
    pub warmup: Option<usize>,
}

impl Default for TimeseriesConfig {
    fn default() -> Self {
        Self { window: 1000, alpha: 0.1, drift: -2e-4, warmup: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: WindowMode,
    pub mean_coverage: f64,
    pub final_rolling_coverage: f64,
    pub min_rolling_coverage: f64,
    pub mean_length: f64,
    /// Slope of length on |injected bias| over all emitted steps.
    pub slope_all: Option<f64>,
    /// Same, restricted to steps with |bias| at or above the median.
    pub slope_high_half: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeseriesReport {
    pub schema: u32,
    pub version: String,
    pub config: TimeseriesConfig,
    pub source: serde_json::Value,
    pub steps: usize,
    pub modes: Vec<ModeSummary>,
}

pub struct TimeseriesRun {
    pub report: TimeseriesReport,
    pub results: Vec<(WindowMode, Vec<StepResult>)>,
}

fn summarize(mode: WindowMode, steps: &[StepResult], drift: f64) -> ModeSummary {
    let n = steps.len() as f64;
    let profile: Vec<(f64, f64)> =
        length_vs_bias_profile(steps, drift).into_iter().map(|(b, l)| (b.abs(), l)).collect();
    let mut abs_bias: Vec<f64> = profile.iter().map(|p| p.0).collect();
    abs_bias.sort_unstable_by(f64::total_cmp);
    let median = abs_bias[abs_bias.len() / 2];
    let high: Vec<(f64, f64)> = profile.iter().copied().filter(|p| p.0 >= median).collect();
    ModeSummary {
        mode,
        mean_coverage: steps.iter().filter(|s| s.covered).count() as f64 / n,
        final_rolling_coverage: steps.last().map_or(f64::NAN, |s| s.rolling_coverage),
        min_rolling_coverage: steps.iter().map(|s| s.rolling_coverage).fold(f64::INFINITY, f64::min),
        mean_length: steps.iter().map(|s| s.length).sum::<f64>() / n,
        slope_all: ols_slope(&profile),
        slope_high_half: ols_slope(&high),
    }
}

/// Injects the configured drift into `series` and runs all three modes.
pub fn run_timeseries(
    series: &[SeriesPoint],
    config: &TimeseriesConfig,
    source: serde_json::Value,
) -> Result<TimeseriesRun> {
    let drifted = inject_drift(series, config.drift);
    let warmup = config.warmup.unwrap_or(config.window);
    let results = par_map(&WindowMode::ALL, |&mode| {
        let wc = WindowConfig { warmup, ..WindowConfig::new(config.window, config.alpha, mode) };
        run_windowed(&drifted, &wc).map(|r| (mode, r))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let modes = results.iter().map(|(m, r)| summarize(*m, r, config.drift)).collect();
    Ok(TimeseriesRun {
        report: TimeseriesReport {
            schema: SCHEMA,
            version: VERSION.to_string(),
            config: *config,
            source,
            steps: series.len(),
            modes,
        },
        results,
    })
}
