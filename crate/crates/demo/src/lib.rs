//! Browser bindings. Every function returns a JSON string for the page to plot.

use serde_json::json;
use wasm_bindgen::prelude::*;

use conformal_bias::bias::{BiasObjective, OptimizerConfig};
use conformal_bias::experiments::{run_sweep, run_timeseries, BiasGrid, SweepConfig, TimeseriesConfig};
use conformal_bias::synthgen::{generate, weather_series, Skew, SyntheticConfig, WeatherConfig};
use conformal_bias::{Error, ScoreSpec};

fn skew(name: &str) -> Result<Skew, Error> {
    Skew::ALL
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown skew {name:?}")))
}

fn data_config(skew_name: &str, samples: usize, n: usize, seed: u64, bias: f64) -> Result<SyntheticConfig, Error> {
    Ok(SyntheticConfig { n_cal: n, n_test: n, n_samples: samples, bias, ..skew(skew_name)?.config(seed) })
}

fn spec_for(samples: usize) -> ScoreSpec {
    if samples == 1 {
        ScoreSpec::L1
    } else {
        ScoreSpec::Cqr { inner_lo: 0.05, inner_hi: 0.05 }
    }
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

pub fn sweep_json(skew_name: &str, samples: usize, n: usize, seed: u64, alpha: f64) -> Result<String, Error> {
    let (cal, test) = generate(&data_config(skew_name, samples, n, seed, 0.0)?)?;
    let config = SweepConfig {
        alpha,
        alpha_lo: alpha / 2.0,
        alpha_hi: alpha / 2.0,
        grid: BiasGrid::default(),
        ..SweepConfig::new(spec_for(samples))
    };
    let report = run_sweep(&cal, &test, &config, json!({ "skew": skew_name, "seed": seed }))?;
    Ok(serde_json::to_string(&report).expect("serializable"))
}

/// Maximum test lengths of both modes over a bias grid of -2..2.
#[wasm_bindgen]
pub fn bias_sweep(skew_name: &str, samples: usize, n: usize, seed: u64, alpha: f64) -> Result<String, JsError> {
    sweep_json(skew_name, samples, n, seed, alpha).map_err(js)
}

pub fn objective_json(
    skew_name: &str,
    samples: usize,
    n: usize,
    seed: u64,
    bias: f64,
    alpha: f64,
    points: usize,
) -> Result<String, Error> {
    let (cal, _) = generate(&SyntheticConfig { n_test: 1, ..data_config(skew_name, samples, n, seed, bias)? })?;
    let obj = BiasObjective::new(&cal, &spec_for(samples), alpha)?;
    let est = conformal_bias::bias::estimate_bias(&cal, &spec_for(samples), alpha, &OptimizerConfig::default())?;
    let points = points.max(2);
    let (lo, hi) = (est.b_eff - 4.0, est.b_eff + 4.0);
    let curve: Vec<[f64; 2]> = (0..points)
        .map(|j| {
            let c = lo + (hi - lo) * j as f64 / (points - 1) as f64;
            [c, obj.eval(c)]
        })
        .collect();
    Ok(json!({ "curve": curve, "b_eff": est.b_eff, "objective": est.final_objective, "injected": bias }).to_string())
}

/// Symmetric-length objective around its minimiser, with the estimate.
#[wasm_bindgen]
pub fn objective_curve(
    skew_name: &str,
    samples: usize,
    n: usize,
    seed: u64,
    bias: f64,
    alpha: f64,
    points: usize,
) -> Result<String, JsError> {
    objective_json(skew_name, samples, n, seed, bias, alpha, points).map_err(js)
}

pub fn drift_json(
    steps: usize,
    window: usize,
    alpha: f64,
    drift: f64,
    seed: u64,
    stride: usize,
) -> Result<String, Error> {
    let series = weather_series(&WeatherConfig { steps, seed, ..WeatherConfig::default() })?;
    let config = TimeseriesConfig { window, alpha, drift, warmup: None };
    let run = run_timeseries(&series, &config, json!(null))?;
    let stride = stride.max(1);
    let modes: Vec<_> = run
        .results
        .iter()
        .map(|(mode, res)| {
            let thin: Vec<_> = res.iter().step_by(stride).collect();
            json!({
                "mode": mode.name(),
                "t": thin.iter().map(|s| s.t).collect::<Vec<_>>(),
                "coverage": thin.iter().map(|s| s.rolling_coverage).collect::<Vec<_>>(),
                "length": thin.iter().map(|s| s.length).collect::<Vec<_>>(),
            })
        })
        .collect();
    Ok(json!({ "summary": run.report.modes, "series": modes }).to_string())
}

/// Rolling coverage and lengths of the three window modes on a drifting series.
#[wasm_bindgen]
pub fn drift_coverage(
    steps: usize,
    window: usize,
    alpha: f64,
    drift: f64,
    seed: u64,
    stride: usize,
) -> Result<String, JsError> {
    drift_json(steps, window, alpha, drift, seed, stride).map_err(js)
}
