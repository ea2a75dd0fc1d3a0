//! Series randomization and the 128-case stress battery.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{compute_metrics, run_backtest, ExecutionModel, DEFAULT_DAYS_PER_YEAR};
use crate::error::{Error, Result};
use crate::rng;
use crate::series::{InstrumentSpec, Quote, Series};
use crate::strategy::StrategyConfig;

/// Largest randomization offset, in multiples of the slippage.
pub const RANDOMIZE_SPAN: i64 = 10;

/// One perturbation setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Component {
    ForcedExit { bars: u64 },
    SkipTrade { percent: u32 },
    DelayFill { bars: usize },
    /// Offset in multiples of the slippage.
    AdverseFill { multiple: u32 },
    FeeMultiplier { multiplier: u32 },
}

impl Component {
    /// Whether the component only changes accounting, never the trade
    /// sequence.
    pub fn is_cost_only(self) -> bool {
        matches!(self, Component::AdverseFill { .. } | Component::FeeMultiplier { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StressTest {
    pub id: usize,
    pub components: Vec<Component>,
}

impl StressTest {
    /// Execution model produced by combining all components.
    pub fn execution(&self, instrument: &InstrumentSpec) -> ExecutionModel {
        let mut exec = ExecutionModel {
            stream: self.id as u64,
            ..ExecutionModel::default()
        };
        let mut keep = 1.0;
        for c in &self.components {
            match *c {
                Component::ForcedExit { bars } => {
                    exec.forced_exit_bars = Some(exec.forced_exit_bars.map_or(bars, |b| b.min(bars)));
                }
                Component::SkipTrade { percent } => keep *= 1.0 - f64::from(percent) / 100.0,
                Component::DelayFill { bars } => exec.delay_bars += bars,
                Component::AdverseFill { multiple } => {
                    exec.adverse_ticks += i64::from(multiple) * i64::from(instrument.slippage_bp);
                }
                Component::FeeMultiplier { multiplier } => {
                    exec.fee_multiplier = Some(exec.fee_multiplier.map_or(multiplier, |m| m.max(multiplier)));
                }
            }
        }
        exec.skip_probability = 1.0 - keep;
        exec
    }

    /// The same test with cost-only components removed. The returned test
    /// keeps the id, so random draws are shared with `self`.
    pub fn without_costs(&self) -> StressTest {
        StressTest {
            id: self.id,
            components: self.components.iter().copied().filter(|c| !c.is_cost_only()).collect(),
        }
    }
}

pub fn single_factor_settings() -> Vec<Component> {
    let mut v = Vec::with_capacity(16);
    v.extend([1, 5, 20, 60].map(|bars| Component::ForcedExit { bars }));
    v.extend([5, 10, 20, 30].map(|percent| Component::SkipTrade { percent }));
    v.extend([1, 2, 3, 4].map(|bars| Component::DelayFill { bars }));
    v.extend([1, 2, 3, 4].map(|multiple| Component::AdverseFill { multiple }));
    v
}

pub fn extreme_settings() -> [Component; 8] {
    [
        Component::SkipTrade { percent: 30 },
        Component::SkipTrade { percent: 20 },
        Component::DelayFill { bars: 4 },
        Component::DelayFill { bars: 3 },
        Component::AdverseFill { multiple: 4 },
        Component::AdverseFill { multiple: 3 },
        Component::FeeMultiplier { multiplier: 8 },
        Component::FeeMultiplier { multiplier: 6 },
    ]
}

pub const CATALOG_SIZE: usize = 128;

/// Ids 0..120 are the pairs `(i, j)`, `i < j`, of the 16 single-factor
/// settings in lexicographic order; ids 120..128 are the single extremes.
pub fn build_catalog() -> Vec<StressTest> {
    let singles = single_factor_settings();
    let mut out = Vec::with_capacity(CATALOG_SIZE);
    for i in 0..singles.len() {
        for j in i + 1..singles.len() {
            out.push(vec![singles[i], singles[j]]);
        }
    }
    out.extend(extreme_settings().into_iter().map(|c| vec![c]));
    out.into_iter()
        .enumerate()
        .map(|(id, components)| StressTest { id, components })
        .collect()
}

/// Test with the given id, if in the catalog.
pub fn stress_test(id: usize) -> Option<StressTest> {
    build_catalog().into_iter().nth(id)
}

/// Random offsets in ticks, uniform on `{-10..=10} * slippage_bp`.
pub fn randomization_offsets(n: usize, slippage_bp: u32, seed: u64) -> Vec<i64> {
    let mut r = rng::substream(seed, "randomize_series", 0);
    (0..n)
        .map(|_| r.random_range(-RANDOMIZE_SPAN..=RANDOMIZE_SPAN) * i64::from(slippage_bp))
        .collect()
}

/// Adds an independent offset to every close. Timestamps are unchanged and
/// closes are kept at one tick or more.
pub fn randomize_series(s: &Series, seed: u64) -> Result<Series> {
    let slippage = s.instrument().slippage_bp;
    if slippage == 0 {
        return Err(Error::InvalidArgument(
            "randomization needs a positive slippage".into(),
        ));
    }
    let offsets = randomization_offsets(s.len(), slippage, seed);
    let quotes = s
        .quotes()
        .iter()
        .zip(offsets)
        .map(|(q, o)| Quote {
            timestamp: q.timestamp,
            close: (q.close + o).max(1),
        })
        .collect();
    Ok(s.with_quotes(quotes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub sharpe: Option<f64>,
    pub total_net_bp: i64,
    pub n_trades: usize,
    pub config_digest: String,
    /// Set when the ledger breaks an accounting invariant.
    pub invariant_violation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryEntry {
    pub id: usize,
    pub components: Vec<Component>,
    /// Engine error for this test, if any.
    pub error: Option<String>,
    pub run: Option<RunSummary>,
    /// Same test on a randomized copy of the series.
    pub randomized: Option<RunSummary>,
}

impl BatteryEntry {
    pub fn sharpe(&self) -> Option<f64> {
        self.run.as_ref().and_then(|r| r.sharpe)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpeSpread {
    /// One value per test, in id order; `None` where undefined.
    pub sharpes: Vec<Option<f64>>,
    pub defined: usize,
    pub mean: Option<f64>,
    /// Root-mean-square deviation about the mean.
    pub rms: Option<f64>,
    pub min: Option<f64>,
}

impl SharpeSpread {
    pub fn from_values(sharpes: Vec<Option<f64>>) -> Self {
        let defined: Vec<f64> = sharpes.iter().flatten().copied().collect();
        Self {
            defined: defined.len(),
            mean: crate::stats::mean(&defined),
            rms: crate::stats::rms_about_mean(&defined),
            min: defined.iter().copied().reduce(f64::min),
            sharpes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryOptions {
    /// Also run every test on a randomized series.
    pub randomize: bool,
    pub days_per_year: f64,
}

impl Default for BatteryOptions {
    fn default() -> Self {
        Self {
            randomize: false,
            days_per_year: DEFAULT_DAYS_PER_YEAR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryReport {
    pub seed: u64,
    pub series_fingerprint: String,
    pub entries: Vec<BatteryEntry>,
    pub spread: SharpeSpread,
    pub randomized_spread: Option<SharpeSpread>,
    /// Ids whose ledger failed an invariant check.
    pub invariant_failures: Vec<usize>,
}

fn summarize(
    s: &Series,
    strategy: &StrategyConfig,
    test: &StressTest,
    seed: u64,
    days_per_year: f64,
) -> Result<RunSummary> {
    let ledger = run_backtest(s, strategy, Some(test), seed)?;
    let metrics = compute_metrics(&ledger, days_per_year);
    Ok(RunSummary {
        sharpe: metrics.sharpe,
        total_net_bp: metrics.total_net_bp,
        n_trades: metrics.n_trades,
        invariant_violation: ledger.check_invariants().err(),
        config_digest: ledger.config_digest,
    })
}

/// Runs every catalog test. Engine failures are recorded per entry.
pub fn run_battery(
    s: &Series,
    strategy: &StrategyConfig,
    seed: u64,
    opts: BatteryOptions,
) -> Result<BatteryReport> {
    strategy.validate()?;
    let catalog = build_catalog();
    let entries: Vec<BatteryEntry> = catalog
        .par_iter()
        .map(|test| {
            let nominal = summarize(s, strategy, test, seed, opts.days_per_year);
            let randomized = if opts.randomize {
                let rseed = rng::derive_seed(seed, "battery_randomize", test.id as u64);
                Some(
                    randomize_series(s, rseed)
                        .and_then(|r| summarize(&r, strategy, test, seed, opts.days_per_year)),
                )
            } else {
                None
            };
            let mut errors = Vec::new();
            let run = nominal.map_err(|e| errors.push(e.to_string())).ok();
            let randomized = randomized.and_then(|r| {
                r.map_err(|e| errors.push(format!("randomized: {e}"))).ok()
            });
            BatteryEntry {
                id: test.id,
                components: test.components.clone(),
                error: (!errors.is_empty()).then(|| errors.join("; ")),
                run,
                randomized,
            }
        })
        .collect();

    let spread = SharpeSpread::from_values(entries.iter().map(BatteryEntry::sharpe).collect());
    let randomized_spread = opts.randomize.then(|| {
        SharpeSpread::from_values(
            entries
                .iter()
                .map(|e| e.randomized.as_ref().and_then(|r| r.sharpe))
                .collect(),
        )
    });
    let invariant_failures = entries
        .iter()
        .filter(|e| {
            [&e.run, &e.randomized]
                .into_iter()
                .flatten()
                .any(|r| r.invariant_violation.is_some())
        })
        .map(|e| e.id)
        .collect();
    Ok(BatteryReport {
        seed,
        series_fingerprint: s.fingerprint(),
        entries,
        spread,
        randomized_spread,
        invariant_failures,
    })
}
