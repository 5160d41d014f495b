//! Acceptance criteria. Each test prints one PASS/FAIL line to stderr
//! (bypassing the harness capture) before asserting.

use std::io::Write;
use std::time::Instant;

use conformal_bias::bias::{estimate_bias, refined_grid_oracle, BiasObjective, OptimizerConfig};
use conformal_bias::experiments::{run_sweep, run_table, run_timeseries, SweepConfig, TableConfig, TimeseriesConfig};
use conformal_bias::io::Dataset;
use conformal_bias::synthgen::{generate, skew_suite, weather_series, NoiseSpec, Skew, SyntheticConfig, WeatherConfig};
use conformal_bias::timeseries::{ols_slope, WindowMode};
use conformal_bias::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHIFTS: [f64; 6] = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0];

fn report(id: u32, name: &str, pass: bool, detail: &str, started: Instant) {
    let line = format!(
        "{} criterion {id} ({name}): {detail} [{:.1}s]\n",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

struct Fixture {
    label: String,
    spec: ScoreSpec,
    cal: Vec<PredictionRecord>,
    test: Vec<PredictionRecord>,
}

/// 100 seeded n = 1000 fixtures cycling through the skew settings,
/// alternating L1 (point) and CQR (1000 samples).
fn shift_fixtures() -> Vec<Fixture> {
    (0..100u64)
        .map(|i| {
            let skew = Skew::ALL[(i % 3) as usize];
            let cqr = i % 2 == 1;
            let cfg = SyntheticConfig { n_samples: if cqr { 1000 } else { 1 }, ..skew.config(i) };
            let (cal, test) = generate(&cfg).unwrap();
            let spec = if cqr { ScoreSpec::cqr(0.05, 0.05).unwrap() } else { ScoreSpec::L1 };
            Fixture { label: format!("{}/{}/seed {i}", skew.name(), spec.name()), spec, cal, test }
        })
        .collect()
}

struct ShiftOutcome {
    label: String,
    b: f64,
    sym: Vec<Interval>,
    asym: Vec<Interval>,
}

fn intervals_at(f: &Fixture, b: f64) -> ShiftOutcome {
    let cal = shift_records(&f.cal, b);
    let test = shift_records(&f.test, b);
    let fs = fit_symmetric(&cal, &f.spec, 0.1).unwrap();
    let fa = fit_asymmetric(&cal, &f.spec, 0.05, 0.05).unwrap();
    ShiftOutcome {
        label: f.label.clone(),
        b,
        sym: test.iter().map(|t| predict_interval_symmetric(t, &fs, &f.spec).unwrap()).collect(),
        asym: test.iter().map(|t| predict_interval_asymmetric(t, &fa, &f.spec).unwrap()).collect(),
    }
}

fn shift_outcomes() -> &'static Vec<(ShiftOutcome, Vec<ShiftOutcome>)> {
    static CELL: std::sync::OnceLock<Vec<(ShiftOutcome, Vec<ShiftOutcome>)>> = std::sync::OnceLock::new();
    CELL.get_or_init(|| {
        use rayon::prelude::*;
        shift_fixtures()
            .par_iter()
            .map(|f| (intervals_at(f, 0.0), SHIFTS.iter().map(|&b| intervals_at(f, b)).collect()))
            .collect()
    })
}

fn max_len(v: &[Interval]) -> f64 {
    v.iter().map(|i| i.raw_length()).fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn criterion_1_asymmetric_endpoints_are_shift_invariant() {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for (base, shifted) in shift_outcomes() {
        for s in shifted {
            for (a0, ab) in base.asym.iter().zip(&s.asym) {
                let rel =
                    ((ab.lo - a0.lo).abs() / a0.lo.abs().max(1.0)).max((ab.hi - a0.hi).abs() / a0.hi.abs().max(1.0));
                worst = worst.max(rel);
                if rel > 1e-9 {
                    failures.push(format!("{} b={}: {a0:?} -> {ab:?}", s.label, s.b));
                }
            }
        }
    }
    let pass = failures.is_empty();
    report(
        1,
        "asymmetric endpoints invariant under shift",
        pass,
        &format!("worst relative endpoint change {worst:.2e} over 100 fixtures x 6 shifts"),
        t,
    );
    assert!(pass, "{} violations, first: {}", failures.len(), failures[0]);
}

#[test]
fn criterion_2_symmetric_length_bound() {
    let t = Instant::now();
    let mut slack = f64::INFINITY;
    let mut failures = Vec::new();
    for (base, shifted) in shift_outcomes() {
        for s in shifted {
            for (s0, sb) in base.sym.iter().zip(&s.sym) {
                let bound = s0.raw_length() + 2.0 * s.b.abs();
                slack = slack.min(bound - sb.raw_length());
                if sb.raw_length() > bound + 1e-9 {
                    failures.push(format!("{} b={}: {} > {bound}", s.label, s.b, sb.raw_length()));
                }
            }
        }
    }
    let pass = failures.is_empty();
    report(2, "symmetric length <= L(0) + 2|b|", pass, &format!("smallest slack {slack:.3e}"), t);
    assert!(pass, "{} violations, first: {}", failures.len(), failures[0]);
}

#[test]
fn criterion_3_asymmetric_shorter_past_crossover() {
    let t = Instant::now();
    let mut checked = 0usize;
    let mut failures = Vec::new();
    for (base, shifted) in shift_outcomes() {
        let (ls0, la0) = (max_len(&base.sym), max_len(&base.asym));
        for s in shifted {
            if 2.0 * s.b.abs() >= la0 - ls0 {
                checked += 1;
                let (ls, la) = (max_len(&s.sym), max_len(&s.asym));
                if la > ls + 1e-9 {
                    failures.push(format!(
                        "{} b={}: L_sym(0)={ls0:.6} L_asym(0)={la0:.6} L_sym(b)={ls:.6} L_asym(b)={la:.6}",
                        s.label, s.b
                    ));
                }
            }
        }
    }
    let pass = failures.is_empty();
    let (deb_checked, deb_failures) = debiased_crossover_counts();
    let detail = if pass {
        format!("{checked} (fixture, b) pairs meet the condition, no counterexamples")
    } else {
        format!(
            "{} counterexamples among {checked} pairs meeting the condition (after debiasing each fixture: {deb_failures} of {deb_checked}); first: {}",
            failures.len(),
            failures[0]
        )
    };
    report(3, "asymmetric no longer than symmetric once 2|b| >= L_asym(0) - L_sym(0)", pass, &detail, t);
    assert!(pass, "{}", failures.join("\n"));
}

/// Same check with each fixture first moved by its own estimated bias, so
/// that `b = 0` is the debiased predictor. Reported alongside criterion 3.
fn debiased_crossover_counts() -> (usize, usize) {
    use rayon::prelude::*;
    let counts: Vec<(usize, usize)> = shift_fixtures()
        .par_iter()
        .map(|f| {
            let b_eff = estimate_bias(&f.cal, &f.spec, 0.1, &OptimizerConfig::default()).unwrap().b_eff;
            let f = Fixture {
                label: f.label.clone(),
                spec: f.spec,
                cal: shift_records(&f.cal, -b_eff),
                test: shift_records(&f.test, -b_eff),
            };
            let base = intervals_at(&f, 0.0);
            let (ls0, la0) = (max_len(&base.sym), max_len(&base.asym));
            let mut c = (0, 0);
            for &b in &SHIFTS {
                if 2.0 * b.abs() >= la0 - ls0 {
                    c.0 += 1;
                    let s = intervals_at(&f, b);
                    c.1 += (max_len(&s.asym) > max_len(&s.sym) + 1e-9) as usize;
                }
            }
            c
        })
        .collect();
    counts.iter().fold((0, 0), |a, c| (a.0 + c.0, a.1 + c.1))
}

#[test]
fn criterion_4_monte_carlo_coverage() {
    use rayon::prelude::*;
    let t = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for (n_samples, spec) in [(1000, ScoreSpec::cqr(0.05, 0.05).unwrap()), (1, ScoreSpec::L1)] {
        let per_trial: Vec<(f64, f64)> = (0..200u64)
            .into_par_iter()
            .map(|trial| {
                let cfg = SyntheticConfig { n_samples, ..Skew::None.config(10_000 + trial) };
                let (cal, test) = generate(&cfg).unwrap();
                let fs = fit_symmetric(&cal, &spec, 0.1).unwrap();
                let fa = fit_asymmetric(&cal, &spec, 0.05, 0.05).unwrap();
                let is: Vec<_> = test.iter().map(|r| predict_interval_symmetric(r, &fs, &spec).unwrap()).collect();
                let ia: Vec<_> = test.iter().map(|r| predict_interval_asymmetric(r, &fa, &spec).unwrap()).collect();
                (empirical_coverage(&test, &is).unwrap(), empirical_coverage(&test, &ia).unwrap())
            })
            .collect();
        let sym = per_trial.iter().map(|c| c.0).sum::<f64>() / 200.0;
        let asym = per_trial.iter().map(|c| c.1).sum::<f64>() / 200.0;
        let ok = (0.88..=0.90 + 1.0 / 1001.0 + 0.02).contains(&sym) && asym >= 0.88;
        pass &= ok;
        lines.push(format!("{}: symmetric {sym:.4}, asymmetric {asym:.4}", spec.name()));
    }
    report(4, "mean coverage over 200 trials", pass, &lines.join("; "), t);
    assert!(pass, "{lines:?}");
}

#[test]
fn criterion_5_estimate_agrees_with_grid_oracle() {
    use rayon::prelude::*;
    let t = Instant::now();
    let cases: Vec<(Skew, bool, f64)> = Skew::ALL
        .iter()
        .flat_map(|&s| [false, true].into_iter().flat_map(move |cqr| [-1.5, 0.0, 1.5].map(|b| (s, cqr, b))))
        .collect();
    let results: Vec<(String, f64, f64, bool)> = cases
        .par_iter()
        .map(|&(skew, cqr, b)| {
            let suite = skew_suite()[Skew::ALL.iter().position(|&s| s == skew).unwrap()];
            let cfg = SyntheticConfig { n_samples: if cqr { suite.n_samples } else { 1 }, bias: b, ..suite };
            let (cal, _) = generate(&cfg).unwrap();
            let spec = if cqr { ScoreSpec::cqr(0.05, 0.05).unwrap() } else { ScoreSpec::L1 };
            let est = estimate_bias(&cal, &spec, 0.1, &OptimizerConfig::default()).unwrap();
            let oracle = refined_grid_oracle(&cal, &spec, 0.1, -10.0, 10.0, 1e-3, 1e-5).unwrap();
            let no_worse = est.final_objective <= oracle.objective_star + 1e-9;
            (format!("{}/{}/b={b}", skew.name(), spec.name()), est.b_eff, oracle.b_star, no_worse)
        })
        .collect();
    let worst = results.iter().map(|r| (r.1 - r.2).abs()).fold(0.0, f64::max);

    let mut exact_worst = 0.0f64;
    for b in [-2.5, 0.3, 3.0] {
        let cal: Vec<_> = (0..500)
            .map(|i| {
                let y = 10.0 + (i as f64 * 0.91).sin() * 5.0;
                PredictionRecord::point(y, y + b).unwrap()
            })
            .collect();
        let est = estimate_bias(&cal, &ScoreSpec::L1, 0.1, &OptimizerConfig::default()).unwrap();
        exact_worst = exact_worst.max((est.b_eff - b).abs());
    }
    let pass = worst <= 1e-2 && exact_worst <= 1e-3 && results.iter().all(|r| r.3);
    report(
        5,
        "bias estimate vs grid oracle",
        pass,
        &format!("worst |b_eff - b_star| {worst:.2e} over {} runs; exact-shift worst {exact_worst:.2e}", results.len()),
        t,
    );
    assert!(pass, "{results:?}");
}

#[test]
fn criterion_6_sweep_shape() {
    let t = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for skew in Skew::ALL {
        let (cal, test) = generate(&skew.config(0)).unwrap();
        let rep =
            run_sweep(&cal, &test, &SweepConfig::new(ScoreSpec::cqr(0.05, 0.05).unwrap()), serde_json::Value::Null)
                .unwrap();
        let asym: Vec<f64> = rep.rows.iter().map(|r| r.l_asym_max).collect();
        let (lo, hi) = asym.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let spread = (hi - lo) / lo.abs();
        let far: Vec<(f64, f64)> =
            rep.rows.iter().filter(|r| r.b.abs() >= 1.0).map(|r| (r.b.abs(), r.l_sym_max)).collect();
        let slope = ols_slope(&far).unwrap();
        let ok = spread < 1e-6 && (1.6..=2.4).contains(&slope);
        pass &= ok;
        lines.push(format!("{}: asym spread {spread:.1e}, sym slope {slope:.3}", skew.name()));
    }
    report(6, "sweep shape", pass, &lines.join("; "), t);
    assert!(pass, "{lines:?}");
}

#[test]
fn criterion_7_drifting_series() {
    let t = Instant::now();
    let series = weather_series(&WeatherConfig::default()).unwrap();
    assert!(series.len() >= 20_000);
    let run = run_timeseries(&series, &TimeseriesConfig::default(), serde_json::Value::Null).unwrap();
    let get = |m: WindowMode| *run.report.modes.iter().find(|s| s.mode == m).unwrap();
    let (sym, asym, naive) = (
        get(WindowMode::WindowedSymmetric),
        get(WindowMode::WindowedAsymmetric),
        get(WindowMode::NaiveGlobalSymmetric),
    );
    let asym_slope = asym.slope_all.unwrap();
    let pass = sym.mean_coverage >= 0.85
        && asym.mean_coverage >= 0.85
        && naive.final_rolling_coverage < sym.final_rolling_coverage
        && naive.final_rolling_coverage < asym.final_rolling_coverage
        && asym_slope.abs() <= 0.2;
    let detail = format!(
        "mean coverage sym {:.4} asym {:.4}; final rolling sym {:.3} asym {:.3} naive {:.3}; asym slope {asym_slope:.4}, sym high-bias slope {:.3}",
        sym.mean_coverage,
        asym.mean_coverage,
        sym.final_rolling_coverage,
        asym.final_rolling_coverage,
        naive.final_rolling_coverage,
        sym.slope_high_half.unwrap()
    );
    report(7, "drifting series", pass, &detail, t);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_8_leave_one_group_out_table() {
    let t = Instant::now();
    let metrics = [("unshifted", 0.0), ("shift_0.5", 0.5), ("shift_2", 2.0), ("shift_-8", -8.0)];
    let mut lines = Vec::new();
    let mut pass = true;
    for (i, (name, shift)) in metrics.into_iter().enumerate() {
        let cfg = SyntheticConfig {
            n_cal: 20,
            n_test: 1,
            n_samples: 50,
            noise: NoiseSpec::Gaussian { mu: 0.0, sigma: 2.0 },
            bias: shift,
            ..Skew::None.config(300 + i as u64)
        };
        let (records, _) = generate(&cfg).unwrap();
        // one record per group, as in a per-patient table
        let groups = (0..records.len()).map(|j| format!("patient-{j:02}")).collect();
        let data = Dataset { records, groups: Some(groups) };
        let row = run_table(name, &data, &TableConfig::new(ScoreSpec::cqr(0.05, 0.05).unwrap())).unwrap();
        let columns_ok = row.folds == 20
            && row.b_eff.is_finite()
            && row.mean_length_diff.is_finite()
            && (0.0..=1.0).contains(&row.p_asym_le_sym);
        let agrees = row.crossover_condition == (row.p_asym_le_sym >= 0.5);
        pass &= columns_ok && agrees;
        lines.push(format!(
            "{name}: b_eff {:.3} mean diff {:.3} P {:.2} flag {}",
            row.b_eff, row.mean_length_diff, row.p_asym_le_sym, row.crossover_condition
        ));
    }
    report(8, "leave-one-group-out table", pass, &lines.join("; "), t);
    assert!(pass, "{lines:?}");
}

#[test]
fn criterion_9_objective_quasi_convexity_probe() {
    use rayon::prelude::*;
    let t = Instant::now();
    let violations: Vec<String> = (0..100u64)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(9_000 + i);
            let skew = Skew::ALL[(i % 3) as usize];
            let cqr = i % 2 == 1;
            let cfg = SyntheticConfig {
                n_samples: if cqr { 100 } else { 1 },
                bias: rng.random_range(-2.0..2.0),
                ..skew.config(i)
            };
            let (cal, _) = generate(&cfg).unwrap();
            let spec = if cqr { ScoreSpec::cqr(0.05, 0.05).unwrap() } else { ScoreSpec::L1 };
            let obj = BiasObjective::new(&cal, &spec, 0.1).unwrap();
            (0..10)
                .filter_map(|_| {
                    let mut c = [0.0; 3].map(|_| rng.random_range(-10.0..10.0));
                    c.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let j = c.map(|x| obj.eval(x));
                    (j[1] > j[0].max(j[2]) + 1e-9).then(|| format!("fixture {i}: c={c:?} J={j:?}"))
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let pass = violations.is_empty();
    report(
        9,
        "quasi-convexity probe",
        pass,
        &format!("{} violations over 1000 (fixture, triple) draws", violations.len()),
        t,
    );
    assert!(pass, "{violations:?}");
}
