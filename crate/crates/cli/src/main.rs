use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use trendgate::optimizer::{optimize_source, Thresholds};
use trendgate::provenance::digest_json;
use trendgate::robustness::{run_battery, BatteryOptions};
use trendgate::{
    compute_metrics, crossing_density, export_report, generate, hurst_rescaled_range, load_csv, log_returns,
    qgauss_fit, resample, run_backtest, scaling_check, split, validate, Error, GeneratorSpec, InstrumentSpec,
    SampleSplit, SearchSpace, Series, SplitSource, StrategyConfig,
};

const OUT_ENV: &str = "TRENDGATE_OUT";

#[derive(Parser)]
#[command(name = "trendgate", version, about = "Volatility-gated trend-following backtests and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a quote CSV and write its canonical form.
    Ingest(Ingest),
    /// Generate a synthetic quote CSV.
    Synth(Synth),
    /// Backtest one parameter set.
    Backtest(Backtest),
    /// Search parameters on the in-sample and run the validation gate.
    Optimize(Optimize),
    /// Run the 128-case stress battery.
    Stress(Stress),
    /// q-Gaussian fit, scaling exponent, Hurst and crossing density.
    Stats(Stats),
    /// Keep every k-th close.
    Resample(Resample),
}

#[derive(Args)]
struct DataArgs {
    /// Quote CSV with a `timestamp,close` header.
    #[arg(long)]
    data: PathBuf,
    /// Run configuration JSON (instrument, bar length, strategy, search space).
    /// Without it prices are read on a 1e-6 grid with a 1 bp slippage.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct OutArg {
    /// Output directory.
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Ingest {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct Synth {
    /// Generator settings JSON.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SegmentArg {
    Full,
    In,
    Out,
}

#[derive(Args)]
struct Backtest {
    #[command(flatten)]
    data: DataArgs,
    /// Sample split JSON.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Segment to run on; defaults to `in` with a split and `full` without.
    #[arg(long, value_enum)]
    segment: Option<SegmentArg>,
    /// Stress test id to apply.
    #[arg(long)]
    stress_id: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct Optimize {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    split: PathBuf,
    /// Search space JSON; overrides `search_space` in the config.
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct Stress {
    #[command(flatten)]
    data: DataArgs,
    /// Also run every test on a randomized copy of the series.
    #[arg(long)]
    randomize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct Stats {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    lags: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    tau0: usize,
    /// Fix q for the scaling check instead of using the lag-1 fit.
    #[arg(long)]
    q: Option<f64>,
    /// Long window of the crossing-density estimate.
    #[arg(long)]
    t2: Option<usize>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct Resample {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    factor: usize,
    #[command(flatten)]
    out: OutArg,
}

fn default_bar_seconds() -> i64 {
    300
}

fn default_days_per_year() -> f64 {
    trendgate::engine::DEFAULT_DAYS_PER_YEAR
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    instrument: InstrumentSpec,
    #[serde(default = "default_bar_seconds")]
    bar_seconds: i64,
    #[serde(default)]
    strategy: Option<StrategyConfig>,
    #[serde(default)]
    search_space: Option<SearchSpace>,
    #[serde(default)]
    thresholds: Thresholds,
    #[serde(default = "default_days_per_year")]
    days_per_year: f64,
}

type CliResult<T> = Result<T, String>;

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            instrument: InstrumentSpec::new("UNSPECIFIED", 1e-6, 1).expect("valid default instrument"),
            bar_seconds: default_bar_seconds(),
            strategy: None,
            search_space: None,
            thresholds: Thresholds::default(),
            days_per_year: default_days_per_year(),
        }
    }
}

fn read_config(path: Option<&Path>) -> CliResult<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), read_json)
}

fn load(data: &DataArgs) -> CliResult<(RunConfig, Series)> {
    let cfg = read_config(data.config.as_deref())?;
    let s = load_csv(&data.data, &cfg.instrument, cfg.bar_seconds).map_err(|e| e.to_string())?;
    Ok((cfg, s))
}

fn domain(e: Error) -> String {
    e.to_string()
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

fn write_file(dir: &Path, name: &str, body: &str) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(path)
}

/// Prints `doc` and, with an output directory, writes it as `name`.
fn emit(out: &OutArg, name: &str, doc: &Value) -> CliResult<()> {
    let body = pretty(doc);
    if let Some(dir) = &out.out {
        write_file(dir, name, &body)?;
    }
    print!("{body}");
    Ok(())
}

fn series_csv(s: &Series, digest: &str) -> String {
    format!("# config_digest={digest}\n{}", s.to_csv_string())
}

fn series_summary(s: &Series) -> Value {
    json!({
        "instrument": s.instrument().name,
        "bars": s.len(),
        "bar_seconds": s.bar_seconds(),
        "first_timestamp": s.quotes().first().map(|q| q.timestamp),
        "last_timestamp": s.quotes().last().map(|q| q.timestamp),
        "fingerprint": s.fingerprint(),
    })
}

fn strategy_of(cfg: &RunConfig) -> CliResult<StrategyConfig> {
    cfg.strategy.ok_or_else(|| "config has no `strategy`".to_string())
}

fn ingest(a: Ingest) -> CliResult<()> {
    let (cfg, s) = load(&a.data)?;
    let digest = digest_json(&json!({"command": "ingest", "series": s.fingerprint(), "instrument": cfg.instrument}));
    if let Some(dir) = &a.out.out {
        write_file(dir, "quotes.csv", &series_csv(&s, &digest))?;
    }
    emit(&a.out, "ingest.json", &json!({"config_digest": digest, "series": series_summary(&s)}))
}

fn synth(a: Synth) -> CliResult<()> {
    let spec: GeneratorSpec = read_json(&a.spec)?;
    let cfg = read_config(a.config.as_deref())?;
    let s = generate(&spec, &cfg.instrument).map_err(domain)?;
    let digest = digest_json(&json!({"command": "synth", "spec": spec, "instrument": cfg.instrument}));
    let dir = a.out.out.as_ref().ok_or("synth needs --out or TRENDGATE_OUT")?;
    write_file(dir, "synth.csv", &series_csv(&s, &digest))?;
    emit(&a.out, "synth.json", &json!({"config_digest": digest, "spec": spec, "series": series_summary(&s)}))
}

fn backtest(a: Backtest) -> CliResult<()> {
    let (cfg, s) = load(&a.data)?;
    let strategy = strategy_of(&cfg)?;
    let segment = a.segment.unwrap_or(if a.split.is_some() { SegmentArg::In } else { SegmentArg::Full });
    let series = match (segment, &a.split) {
        (SegmentArg::Full, _) => s,
        (_, None) => return Err("--segment in/out needs --split".into()),
        (seg, Some(path)) => {
            let sp: SampleSplit = read_json(path)?;
            let (i, o, _live) = split(&s, &sp).map_err(domain)?;
            if seg == SegmentArg::In {
                i
            } else {
                o
            }
        }
    };
    let test = match a.stress_id {
        Some(id) => Some(trendgate::robustness::stress_test(id).ok_or(format!("no stress test {id}"))?),
        None => None,
    };
    let ledger = run_backtest(&series, &strategy, test.as_ref(), a.seed).map_err(domain)?;
    let metrics = compute_metrics(&ledger, cfg.days_per_year);
    if let Some(dir) = &a.out.out {
        export_report(&ledger, &metrics, dir).map_err(domain)?;
    } else {
        print!("{}", trendgate::engine::metrics_json(&ledger, &metrics).map_err(domain)?);
    }
    Ok(())
}

fn optimize_cmd(a: Optimize) -> CliResult<()> {
    let (cfg, s) = load(&a.data)?;
    let space: SearchSpace = match &a.space {
        Some(p) => read_json(p)?,
        None => cfg.search_space.clone().ok_or("no search space: pass --space or set `search_space`")?,
    };
    let sp: SampleSplit = read_json(&a.split)?;
    let source = SplitSource::new(&s, &sp).map_err(domain)?;
    let result = optimize_source(&source, &space, a.budget, a.seed).map_err(domain)?;
    let report = validate(result.best_params, space.settings, &source, cfg.thresholds, a.seed).map_err(domain)?;
    let digest = digest_json(&json!({
        "command": "optimize",
        "series": s.fingerprint(),
        "instrument": cfg.instrument,
        "split": sp,
        "space": space,
        "budget": a.budget,
        "thresholds": cfg.thresholds,
        "seed": a.seed,
    }));
    if let Some(dir) = &a.out.out {
        let trace = json!({"config_digest": digest, "trace": result.trace});
        write_file(dir, "optimize_trace.json", &pretty(&trace))?;
    }
    let doc = json!({
        "config_digest": digest,
        "evaluations": result.trace.len(),
        "best_in_sample_sharpe": result.best_sharpe,
        "validation": report,
    });
    emit(&a.out, "validation.json", &doc)
}

fn stress(a: Stress) -> CliResult<()> {
    let (cfg, s) = load(&a.data)?;
    let strategy = strategy_of(&cfg)?;
    let opts = BatteryOptions {
        randomize: a.randomize,
        days_per_year: cfg.days_per_year,
    };
    let report = run_battery(&s, &strategy, a.seed, opts).map_err(domain)?;
    let digest = digest_json(&json!({
        "command": "stress",
        "series": s.fingerprint(),
        "instrument": cfg.instrument,
        "strategy": strategy,
        "randomize": a.randomize,
        "seed": a.seed,
    }));
    let summary = |r: &Option<trendgate::robustness::RunSummary>| {
        r.as_ref().map(|r| json!({"sharpe": r.sharpe, "total_net_bp": r.total_net_bp, "n_trades": r.n_trades}))
    };
    let tests: Vec<Value> = report
        .entries
        .iter()
        .map(|e| {
            json!({
                "id": e.id,
                "components": e.components,
                "sharpe": e.sharpe(),
                "total_net_bp": e.run.as_ref().map(|r| r.total_net_bp),
                "n_trades": e.run.as_ref().map(|r| r.n_trades),
                "error": e.error,
                "randomized": summary(&e.randomized),
            })
        })
        .collect();
    let doc = json!({
        "config_digest": digest,
        "seed": a.seed,
        "randomize": a.randomize,
        "tests": tests,
        "spread": report.spread,
        "randomized_spread": report.randomized_spread,
        "invariant_failures": report.invariant_failures,
    });
    emit(&a.out, "stress.json", &doc)
}

fn stats(a: Stats) -> CliResult<()> {
    let (cfg, s) = load(&a.data)?;
    let returns = log_returns(&s, 1).map_err(domain)?;
    let fit = qgauss_fit(&returns).map_err(domain)?;
    let q = a.q.unwrap_or(fit.model.q);
    let scaling = scaling_check(&s, q, &a.lags, a.tau0).map_err(domain)?;
    let hurst = hurst_rescaled_range(&returns).map_err(domain)?;
    let density = match a.t2 {
        Some(t2) => Some(crossing_density(&s, (t2 * 3).div_ceil(5), t2).map_err(domain)?),
        None => None,
    };
    let digest = digest_json(&json!({
        "command": "stats",
        "series": s.fingerprint(),
        "instrument": cfg.instrument,
        "lags": a.lags,
        "tau0": a.tau0,
        "q": a.q,
        "t2": a.t2,
    }));
    let doc = json!({
        "config_digest": digest,
        "q_fit": fit,
        "scaling": scaling,
        "hurst": hurst,
        "crossing_density": density,
    });
    emit(&a.out, "stats.json", &doc)
}

fn resample_cmd(a: Resample) -> CliResult<()> {
    let (cfg, s) = load(&a.data)?;
    let r = resample(&s, a.factor).map_err(domain)?;
    let digest = digest_json(&json!({
        "command": "resample",
        "series": s.fingerprint(),
        "instrument": cfg.instrument,
        "factor": a.factor,
    }));
    let dir = a.out.out.as_ref().ok_or("resample needs --out or TRENDGATE_OUT")?;
    write_file(dir, "resampled.csv", &series_csv(&r, &digest))?;
    emit(&a.out, "resample.json", &json!({"config_digest": digest, "series": series_summary(&r)}))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Backtest(a) => backtest(a),
        Command::Optimize(a) => optimize_cmd(a),
        Command::Stress(a) => stress(a),
        Command::Stats(a) => stats(a),
        Command::Resample(a) => resample_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
