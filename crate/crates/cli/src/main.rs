use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use conformal_bias::bias::{estimate_bias, BiasEstimate, BiasInit, OptimizerConfig, StepSchedule};
use conformal_bias::experiments::{
    run_sweep, run_table, run_timeseries, sweep_csv, table_csv, BiasGrid, SweepConfig, TableConfig, TableReport,
    TimeseriesConfig, SCHEMA,
};
use conformal_bias::io::{read_records_path, read_series, write_records, write_series, write_steps, Dataset};
use conformal_bias::synthgen::{
    generate, noise_draws, weather_series, NegationConvention, NoiseSpec, Skew, SyntheticConfig, WeatherConfig,
};
use conformal_bias::verify::run_verify;
use conformal_bias::{PredictionRecord, ScoreSpec, VERSION};

#[derive(Parser, Debug)]
#[command(name = "cbias", version, about = "Conformal intervals under prediction bias")]
struct Cli {
    /// More log output (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Shift predictions over a bias grid and record both modes' lengths
    Sweep(SweepArgs),
    /// Leave-one-group-out summary per metric file
    Table(TableArgs),
    /// Windowed and naive calibration on a drifting series
    Timeseries(TimeseriesArgs),
    /// Minimise the symmetric length over a constant shift
    EstimateBias(EstimateArgs),
    /// Randomised property checks
    Verify(VerifyArgs),
    /// Emit generated data sets
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ScoreKind {
    L1,
    Cqr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SkewArg {
    Right,
    None,
    Left,
}

impl From<SkewArg> for Skew {
    fn from(s: SkewArg) -> Self {
        match s {
            SkewArg::Right => Skew::Right,
            SkewArg::None => Skew::None,
            SkewArg::Left => Skew::Left,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ConventionArg {
    NegateShifted,
    ShiftNegated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ScheduleArg {
    Constant,
    Diminishing,
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Directory for output files; stdout when omitted
    #[arg(long)]
    output: Option<PathBuf>,

    /// Format for stdout
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Score family; inferred from the input columns when omitted
    #[arg(long, value_enum)]
    score: Option<ScoreKind>,

    /// Lower inner quantile of the CQR band
    #[arg(long, default_value_t = 0.05)]
    inner_lo: f64,

    /// Upper inner tail of the CQR band (the band's top is the 1 - inner_hi quantile)
    #[arg(long, default_value_t = 0.05)]
    inner_hi: f64,
}

impl ScoreArgs {
    fn spec(&self, records: &[PredictionRecord]) -> Result<ScoreSpec, String> {
        let kind = self.score.unwrap_or(if records.first().is_some_and(|r| r.is_point()) {
            ScoreKind::L1
        } else {
            ScoreKind::Cqr
        });
        match kind {
            ScoreKind::L1 => Ok(ScoreSpec::L1),
            ScoreKind::Cqr => ScoreSpec::cqr(self.inner_lo, self.inner_hi).map_err(|e| e.to_string()),
        }
    }
}

#[derive(Args, Debug)]
struct AlphaArgs {
    /// Symmetric miscoverage
    #[arg(long)]
    alpha: Option<f64>,

    /// Lower-tail miscoverage of the asymmetric mode
    #[arg(long)]
    alpha_lo: Option<f64>,

    /// Upper-tail miscoverage of the asymmetric mode
    #[arg(long)]
    alpha_hi: Option<f64>,
}

#[derive(Args, Debug)]
struct SynthSource {
    /// Seed for generated data
    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(long, value_enum, default_value_t = SkewArg::None)]
    skew: SkewArg,

    /// Prediction samples per point; 1 gives point predictions
    #[arg(long, default_value_t = 1000)]
    samples: usize,

    #[arg(long, default_value_t = 1000)]
    n_cal: usize,

    #[arg(long, default_value_t = 1000)]
    n_test: usize,

    /// Constant added to every generated prediction
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    bias: f64,

    /// Where the location of the left-skew noise is applied
    #[arg(long, value_enum, default_value_t = ConventionArg::NegateShifted)]
    convention: ConventionArg,
}

impl SynthSource {
    fn config(&self) -> SyntheticConfig {
        let mut cfg = SyntheticConfig {
            n_cal: self.n_cal,
            n_test: self.n_test,
            n_samples: self.samples,
            bias: self.bias,
            ..Skew::from(self.skew).config(self.seed)
        };
        if let NoiseSpec::NegatedWeibull { convention, .. } = &mut cfg.noise {
            *convention = match self.convention {
                ConventionArg::NegateShifted => NegationConvention::NegateShifted,
                ConventionArg::ShiftNegated => NegationConvention::ShiftNegated,
            };
        }
        cfg
    }
}

#[derive(Args, Debug)]
struct OptimizerArgs {
    /// Initial step size
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,

    /// Stop when consecutive objectives differ by less than this
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,

    #[arg(long, default_value_t = 10_000)]
    max_iterations: usize,

    /// Starting bias: `mean`, `zero` or a number
    #[arg(long, default_value = "mean", allow_hyphen_values = true)]
    init: String,

    #[arg(long, value_enum, default_value_t = ScheduleArg::Diminishing)]
    schedule: ScheduleArg,

    /// Keep the plain descent result even when a lower minimum exists
    #[arg(long)]
    no_refine: bool,

    /// Record the descent path
    #[arg(long)]
    trace: bool,
}

impl OptimizerArgs {
    fn config(&self) -> Result<OptimizerConfig, String> {
        let init = match self.init.as_str() {
            "mean" => BiasInit::MeanDifference,
            "zero" => BiasInit::Zero,
            v => BiasInit::Explicit(
                v.parse().map_err(|_| format!("--init: expected mean, zero or a number, got {v:?}"))?,
            ),
        };
        let schedule = match self.schedule {
            ScheduleArg::Constant => StepSchedule::Constant,
            ScheduleArg::Diminishing => OptimizerConfig::default().schedule,
        };
        let cfg = OptimizerConfig {
            learning_rate: self.learning_rate,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            init,
            schedule,
            refine: !self.no_refine,
            keep_trace: self.trace,
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Calibration CSV; synthetic data when omitted
    #[arg(long, requires = "test")]
    input: Option<PathBuf>,

    /// Test CSV
    #[arg(long, requires = "input")]
    test: Option<PathBuf>,

    #[command(flatten)]
    synth: SynthSource,

    #[command(flatten)]
    score: ScoreArgs,

    #[command(flatten)]
    alpha: AlphaArgs,

    /// Bias grid as lo:hi:step
    #[arg(long, default_value = "-2:2:0.25", allow_hyphen_values = true)]
    bias_grid: String,

    /// Sweep the data as given, without removing the estimated bias first
    #[arg(long)]
    no_debias: bool,

    #[command(flatten)]
    optimizer: OptimizerArgs,

    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
struct TableArgs {
    /// One CSV per metric, named by file stem
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,

    #[command(flatten)]
    score: ScoreArgs,

    #[command(flatten)]
    alpha: AlphaArgs,

    #[command(flatten)]
    optimizer: OptimizerArgs,

    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
struct TimeseriesArgs {
    /// Series CSV with t,y_true,y_pred; synthetic weather when omitted
    #[arg(long)]
    input: Option<PathBuf>,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Length of the synthetic series
    #[arg(long, default_value_t = 20_000)]
    steps: usize,

    /// Calibration window K
    #[arg(long, default_value_t = 1000)]
    window: usize,

    #[arg(long, default_value_t = 0.1)]
    alpha: f64,

    /// Drift added to predictions per step
    #[arg(long, default_value_t = -2e-4, allow_negative_numbers = true)]
    drift: f64,

    /// Steps before the first interval; defaults to the window
    #[arg(long)]
    warmup: Option<usize>,

    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Calibration CSV; synthetic data when omitted
    #[arg(long)]
    input: Option<PathBuf>,

    #[command(flatten)]
    synth: SynthSource,

    #[command(flatten)]
    score: ScoreArgs,

    #[arg(long, default_value_t = 0.1)]
    alpha: f64,

    #[command(flatten)]
    optimizer: OptimizerArgs,

    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Random fixtures per check
    #[arg(long, default_value_t = 200)]
    trials: usize,

    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    synth: SynthSource,

    /// Emit a weather-like series instead of calibration/test sets
    #[arg(long)]
    series: bool,

    /// Series length
    #[arg(long, default_value_t = 20_000)]
    steps: usize,

    /// Also emit a histogram of this many noise draws
    #[arg(long)]
    histogram: Option<usize>,

    /// Histogram bins
    #[arg(long, default_value_t = 50)]
    bins: usize,

    /// Output directory
    #[arg(long)]
    output: PathBuf,
}

type CliResult<T> = Result<T, String>;

fn ctx<T, E: std::fmt::Display>(r: Result<T, E>, what: impl std::fmt::Display) -> CliResult<T> {
    r.map_err(|e| format!("{what}: {e}"))
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    ctx(std::fs::create_dir_all(dir), dir.display())?;
    let path = dir.join(name);
    log::info!("writing {}", path.display());
    Ok(BufWriter::new(ctx(File::create(&path), path.display())?))
}

fn write_json<W: Write, T: Serialize>(mut w: W, value: &T) -> CliResult<()> {
    ctx(serde_json::to_writer_pretty(&mut w, value), "json")?;
    ctx(writeln!(w).and_then(|_| w.flush()), "write")
}

fn load(path: &Path) -> CliResult<Dataset> {
    ctx(read_records_path(path), path.display())
}

fn synthetic(src: &SynthSource) -> CliResult<(Vec<PredictionRecord>, Vec<PredictionRecord>, Value)> {
    let cfg = src.config();
    let (cal, test) = ctx(generate(&cfg), "synthetic data")?;
    Ok((cal, test, json!({ "kind": "synthetic", "config": cfg })))
}

fn alphas(a: &AlphaArgs, default: (f64, f64, f64)) -> (f64, f64, f64) {
    (a.alpha.unwrap_or(default.0), a.alpha_lo.unwrap_or(default.1), a.alpha_hi.unwrap_or(default.2))
}

fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let (cal, test, source) = match (&args.input, &args.test) {
        (Some(c), Some(t)) => {
            let source = json!({ "kind": "csv", "calibration": c, "test": t });
            (load(c)?.records, load(t)?.records, source)
        }
        _ => synthetic(&args.synth)?,
    };
    let spec = args.score.spec(&cal)?;
    let base = SweepConfig::new(spec);
    let (alpha, alpha_lo, alpha_hi) = alphas(&args.alpha, (base.alpha, base.alpha_lo, base.alpha_hi));
    let config = SweepConfig {
        alpha,
        alpha_lo,
        alpha_hi,
        grid: ctx(BiasGrid::parse(&args.bias_grid), "--bias-grid")?,
        optimizer: args.optimizer.config()?,
        debias: !args.no_debias,
        ..base
    };
    let report = ctx(run_sweep(&cal, &test, &config, source), "sweep")?;
    if let Some(e) = &report.bias_estimate {
        log::info!("b_eff = {:.6}", e.b_eff);
    }
    match &args.out.output {
        Some(dir) => {
            write_json(create(dir, "sweep.json")?, &report)?;
            ctx(sweep_csv(create(dir, "sweep.csv")?, &report), "sweep.csv")
        }
        None => match args.out.format {
            Format::Json => write_json(io::stdout().lock(), &report),
            Format::Csv => ctx(sweep_csv(io::stdout().lock(), &report), "stdout"),
        },
    }
}

fn cmd_table(args: &TableArgs) -> CliResult<()> {
    let sets = args.input.iter().map(|p| load(p).map(|d| (p, d))).collect::<CliResult<Vec<_>>>()?;
    let spec = args.score.spec(&sets[0].1.records)?;
    let base = TableConfig::new(spec);
    let (alpha, alpha_lo, alpha_hi) = alphas(&args.alpha, (base.alpha, base.alpha_lo, base.alpha_hi));
    let config = TableConfig { alpha, alpha_lo, alpha_hi, optimizer: args.optimizer.config()?, ..base };
    let mut rows = Vec::new();
    for (path, data) in &sets {
        let metric = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        rows.push(ctx(run_table(&metric, data, &config), path.display())?);
    }
    let report = TableReport { schema: SCHEMA, version: VERSION.to_string(), config, rows };
    match &args.out.output {
        Some(dir) => {
            write_json(create(dir, "table.json")?, &report)?;
            ctx(table_csv(create(dir, "table.csv")?, &report), "table.csv")
        }
        None => match args.out.format {
            Format::Json => write_json(io::stdout().lock(), &report),
            Format::Csv => ctx(table_csv(io::stdout().lock(), &report), "stdout"),
        },
    }
}

fn cmd_timeseries(args: &TimeseriesArgs) -> CliResult<()> {
    let (series, source) = match &args.input {
        Some(p) => {
            let f = ctx(File::open(p), p.display())?;
            (ctx(read_series(f), p.display())?, json!({ "kind": "csv", "series": p }))
        }
        None => {
            let cfg = WeatherConfig { steps: args.steps, seed: args.seed, ..WeatherConfig::default() };
            (ctx(weather_series(&cfg), "synthetic series")?, json!({ "kind": "weather", "config": cfg }))
        }
    };
    let config = TimeseriesConfig { window: args.window, alpha: args.alpha, drift: args.drift, warmup: args.warmup };
    let run = ctx(run_timeseries(&series, &config, source), "timeseries")?;
    match &args.out.output {
        Some(dir) => {
            write_json(create(dir, "timeseries.json")?, &run.report)?;
            for (mode, steps) in &run.results {
                let name = format!("steps_{}.csv", mode.name());
                ctx(write_steps(create(dir, &name)?, steps), &name)?;
            }
            Ok(())
        }
        None => match args.out.format {
            Format::Json => write_json(io::stdout().lock(), &run.report),
            Format::Csv => {
                let mut w = io::stdout().lock();
                let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
                let mut text = String::from(
                    "mode,mean_coverage,final_rolling_coverage,min_rolling_coverage,mean_length,slope_all,slope_high_half\n",
                );
                for m in &run.report.modes {
                    text.push_str(&format!(
                        "{},{},{},{},{},{},{}\n",
                        m.mode.name(),
                        m.mean_coverage,
                        m.final_rolling_coverage,
                        m.min_rolling_coverage,
                        m.mean_length,
                        opt(m.slope_all),
                        opt(m.slope_high_half)
                    ));
                }
                ctx(w.write_all(text.as_bytes()), "stdout")
            }
        },
    }
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    schema: u32,
    version: &'a str,
    spec: ScoreSpec,
    alpha: f64,
    optimizer: OptimizerConfig,
    source: Value,
    estimate: BiasEstimate,
}

fn cmd_estimate(args: &EstimateArgs) -> CliResult<()> {
    let (cal, source) = match &args.input {
        Some(p) => (load(p)?.records, json!({ "kind": "csv", "calibration": p })),
        None => {
            let (cal, _, source) = synthetic(&args.synth)?;
            (cal, source)
        }
    };
    let spec = args.score.spec(&cal)?;
    let optimizer = args.optimizer.config()?;
    let estimate = ctx(estimate_bias(&cal, &spec, args.alpha, &optimizer), "estimate")?;
    let report =
        EstimateReport { schema: SCHEMA, version: VERSION, spec, alpha: args.alpha, optimizer, source, estimate };
    let csv = |mut w: Box<dyn Write + '_>| -> CliResult<()> {
        let e = &report.estimate;
        let mut text = format!(
            "b_eff,final_objective,iterations,converged,refined\n{},{},{},{},{}\n",
            e.b_eff, e.final_objective, e.iterations, e.converged as u8, e.refined as u8
        );
        if let Some(trace) = &e.trace {
            text.push_str("\nstep,b,objective\n");
            for (i, (b, l)) in trace.iter().enumerate() {
                text.push_str(&format!("{i},{b},{l}\n"));
            }
        }
        ctx(w.write_all(text.as_bytes()).and_then(|_| w.flush()), "write")
    };
    match &args.out.output {
        Some(dir) => {
            write_json(create(dir, "estimate.json")?, &report)?;
            csv(Box::new(create(dir, "estimate.csv")?))
        }
        None => match args.out.format {
            Format::Json => write_json(io::stdout().lock(), &report),
            Format::Csv => csv(Box::new(io::stdout().lock())),
        },
    }
}

fn cmd_verify(args: &VerifyArgs) -> CliResult<bool> {
    let report = ctx(run_verify(args.seed, args.trials), "verify")?;
    for c in report.checks.iter().filter(|c| !c.passed) {
        log::warn!("{} failed on {}/{} cases", c.name, c.failures, c.cases);
    }
    let csv = |mut w: Box<dyn Write + '_>| -> CliResult<()> {
        let mut text = String::from("check,passed,cases,failures\n");
        for c in &report.checks {
            text.push_str(&format!("{},{},{},{}\n", c.name, c.passed as u8, c.cases, c.failures));
        }
        ctx(w.write_all(text.as_bytes()).and_then(|_| w.flush()), "write")
    };
    match &args.out.output {
        Some(dir) => {
            write_json(create(dir, "verify.json")?, &report)?;
            csv(Box::new(create(dir, "verify.csv")?))?;
        }
        None => match args.out.format {
            Format::Json => write_json(io::stdout().lock(), &report)?,
            Format::Csv => csv(Box::new(io::stdout().lock()))?,
        },
    }
    Ok(report.passed)
}

/// Equal-width bin counts over the range of the draws.
fn histogram(draws: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let lo = draws.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = draws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &d in draws {
        let i = (((d - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts.into_iter().enumerate().map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c)).collect()
}

fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let dir = &args.output;
    if args.series {
        let cfg = WeatherConfig { steps: args.steps, seed: args.synth.seed, ..WeatherConfig::default() };
        let series = ctx(weather_series(&cfg), "series")?;
        ctx(write_series(create(dir, "series.csv")?, &series), "series.csv")?;
        return write_json(
            create(dir, "config.json")?,
            &json!({ "schema": SCHEMA, "version": VERSION, "weather": cfg }),
        );
    }
    let cfg = args.synth.config();
    let (cal, test) = ctx(generate(&cfg), "synthetic data")?;
    ctx(write_records(create(dir, "cal.csv")?, &Dataset::ungrouped(cal)), "cal.csv")?;
    ctx(write_records(create(dir, "test.csv")?, &Dataset::ungrouped(test)), "test.csv")?;
    if let Some(n) = args.histogram {
        if n == 0 || args.bins == 0 {
            return Err("--histogram and --bins must be positive".into());
        }
        let draws = ctx(noise_draws(&cfg.noise, n, cfg.seed), "noise")?;
        let mut text = String::from("lo,hi,count\n");
        for (lo, hi, c) in histogram(&draws, args.bins) {
            text.push_str(&format!("{lo},{hi},{c}\n"));
        }
        let mut w = create(dir, "noise_histogram.csv")?;
        ctx(w.write_all(text.as_bytes()).and_then(|_| w.flush()), "noise_histogram.csv")?;
    }
    write_json(create(dir, "config.json")?, &json!({ "schema": SCHEMA, "version": VERSION, "synthetic": cfg }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match &cli.command {
        Command::Sweep(a) => cmd_sweep(a).map(|_| true),
        Command::Table(a) => cmd_table(a).map(|_| true),
        Command::Timeseries(a) => cmd_timeseries(a).map(|_| true),
        Command::EstimateBias(a) => cmd_estimate(a).map(|_| true),
        Command::Verify(a) => cmd_verify(a),
        Command::Synth(a) => cmd_synth(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
