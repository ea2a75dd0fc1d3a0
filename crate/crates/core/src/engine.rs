//! Deterministic bar-by-bar backtester.
//!
//! Orders fill at the close of the bar they are due on. Slippage is not
//! applied to prices; it is charged as a round-trip fee of
//! `fee_multiplier * slippage_bp` on every closed trade, so
//! `net_bp = gross_bp - fee_bp` exactly. Any position still open on the
//! final bar is closed there with the normal fee.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicators::rolling_volatility;
use crate::rng;
use crate::robustness::StressTest;
use crate::series::Series;
use crate::strategy::{Bar, OrderIntent, Position, Reason, StrategyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Long,
    Short,
}

impl Side {
    pub fn sign(self) -> i64 {
        match self {
            Side::Long => 1,
            Side::Short => -1,
        }
    }

    fn from_position(p: Position) -> Option<Side> {
        match p {
            Position::Long => Some(Side::Long),
            Position::Short => Some(Side::Short),
            Position::Flat => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Side::Long => "long",
            Side::Short => "short",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    Crossing,
    VolGate,
    ProfitExtreme,
    LossExtreme,
    BreakThreshold,
    ForcedExit,
    EndOfData,
}

impl ExitReason {
    const ALL: [ExitReason; 7] = [
        ExitReason::Crossing,
        ExitReason::VolGate,
        ExitReason::ProfitExtreme,
        ExitReason::LossExtreme,
        ExitReason::BreakThreshold,
        ExitReason::ForcedExit,
        ExitReason::EndOfData,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExitReason::Crossing => "crossing",
            ExitReason::VolGate => "vol_gate",
            ExitReason::ProfitExtreme => "profit_extreme",
            ExitReason::LossExtreme => "loss_extreme",
            ExitReason::BreakThreshold => "break_threshold",
            ExitReason::ForcedExit => "forced_exit",
            ExitReason::EndOfData => "end_of_data",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl From<Reason> for ExitReason {
    fn from(r: Reason) -> Self {
        match r {
            Reason::Crossing => ExitReason::Crossing,
            Reason::VolGate => ExitReason::VolGate,
            Reason::ProfitExtreme => ExitReason::ProfitExtreme,
            Reason::LossExtreme => ExitReason::LossExtreme,
            Reason::BreakThreshold => ExitReason::BreakThreshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trade {
    pub entry_time: i64,
    pub exit_time: i64,
    pub direction: Side,
    /// Fill prices in ticks.
    pub entry_price: i64,
    pub exit_price: i64,
    pub gross_bp: i64,
    pub fee_bp: i64,
    pub net_bp: i64,
    pub duration_bars: u64,
    pub exit_reason: ExitReason,
}

impl Trade {
    /// Accounting identities every trade must satisfy.
    pub fn is_consistent(&self) -> bool {
        self.exit_time >= self.entry_time
            && self.gross_bp == self.direction.sign() * (self.exit_price - self.entry_price)
            && self.net_bp == self.gross_bp - self.fee_bp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquityPoint {
    pub timestamp: i64,
    pub cum_net_bp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    pub trades: Vec<Trade>,
    /// One point per bar: closed net P&L plus the open position marked to
    /// the close, net of its fee.
    pub equity: Vec<EquityPoint>,
    pub config_digest: String,
}

impl Ledger {
    pub fn total_net_bp(&self) -> i64 {
        self.trades.iter().map(|t| t.net_bp).sum()
    }

    /// Checks the ledger invariants: consistent trades, no overlap in time,
    /// and final equity equal to the sum of trade P&L.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if let Some(t) = self.trades.iter().find(|t| !t.is_consistent()) {
            return Err(format!("inconsistent trade {t:?}"));
        }
        if let Some(w) = self
            .trades
            .windows(2)
            .find(|w| w[1].entry_time < w[0].exit_time)
        {
            return Err(format!("overlapping trades {:?} / {:?}", w[0], w[1]));
        }
        let last = self.equity.last().map_or(0, |e| e.cum_net_bp);
        if last != self.total_net_bp() {
            return Err(format!(
                "final equity {last} != sum of net_bp {}",
                self.total_net_bp()
            ));
        }
        Ok(())
    }
}

/// Execution perturbations applied by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutionModel {
    /// Close any position held this many bars.
    pub forced_exit_bars: Option<u64>,
    /// Probability of dropping each entry order.
    pub skip_probability: f64,
    /// Bars between a signal and its fill.
    pub delay_bars: usize,
    /// Ticks each fill is moved against the trader.
    pub adverse_ticks: i64,
    /// Replaces the instrument's fee multiplier when larger.
    pub fee_multiplier: Option<u32>,
    /// Labels the random substream used for skipping.
    pub stream: u64,
}

impl Default for ExecutionModel {
    fn default() -> Self {
        Self {
            forced_exit_bars: None,
            skip_probability: 0.0,
            delay_bars: 0,
            adverse_ticks: 0,
            fee_multiplier: None,
            stream: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct OpenTrade {
    side: Side,
    entry_bar: usize,
    entry_time: i64,
    entry_price: i64,
}

#[derive(Debug, Clone, Copy)]
struct PendingOrder {
    due_bar: usize,
    target: Position,
    reason: ExitReason,
}

struct Book<'a> {
    series: &'a Series,
    exec: ExecutionModel,
    fee_bp: i64,
    open: Option<OpenTrade>,
    trades: Vec<Trade>,
    closed_net: i64,
}

impl Book<'_> {
    fn fill_price(&self, close: i64, buying: bool) -> i64 {
        if buying {
            close + self.exec.adverse_ticks
        } else {
            close - self.exec.adverse_ticks
        }
    }

    fn close_position(&mut self, bar: usize, reason: ExitReason) {
        if let Some(open) = self.open.take() {
            let q = self.series.quotes()[bar];
            let exit_price = self.fill_price(q.close, open.side == Side::Short);
            let gross_bp = open.side.sign() * (exit_price - open.entry_price);
            let trade = Trade {
                entry_time: open.entry_time,
                exit_time: q.timestamp,
                direction: open.side,
                entry_price: open.entry_price,
                exit_price,
                gross_bp,
                fee_bp: self.fee_bp,
                net_bp: gross_bp - self.fee_bp,
                duration_bars: (bar - open.entry_bar) as u64,
                exit_reason: reason,
            };
            self.closed_net += trade.net_bp;
            self.trades.push(trade);
        }
    }

    fn fill(&mut self, bar: usize, target: Position, reason: ExitReason) {
        let current = self.open.map(|o| o.side);
        let wanted = Side::from_position(target);
        if current == wanted {
            return;
        }
        self.close_position(bar, reason);
        if let Some(side) = wanted {
            let q = self.series.quotes()[bar];
            self.open = Some(OpenTrade {
                side,
                entry_bar: bar,
                entry_time: q.timestamp,
                entry_price: self.fill_price(q.close, side == Side::Long),
            });
        }
    }

    fn equity(&self, bar: usize) -> i64 {
        let open = self.open.map_or(0, |o| {
            let close = self.series.quotes()[bar].close;
            let exit = self.fill_price(close, o.side == Side::Short);
            o.side.sign() * (exit - o.entry_price) - self.fee_bp
        });
        self.closed_net + open
    }

    fn position(&self) -> Position {
        match self.open.map(|o| o.side) {
            Some(Side::Long) => Position::Long,
            Some(Side::Short) => Position::Short,
            None => Position::Flat,
        }
    }
}

/// Content hash of everything that determines a backtest.
pub fn config_digest(
    s: &Series,
    strategy: &StrategyConfig,
    perturbation: Option<&StressTest>,
    seed: u64,
) -> String {
    let doc = serde_json::json!({
        "series": s.fingerprint(),
        "instrument": s.instrument(),
        "strategy": strategy,
        "perturbation": perturbation,
        "seed": seed,
    });
    crate::provenance::digest_json(&doc)
}

/// Runs `strategy` over `s`, optionally under a stress perturbation.
/// Fully determined by its arguments.
pub fn run_backtest(
    s: &Series,
    strategy: &StrategyConfig,
    perturbation: Option<&StressTest>,
    seed: u64,
) -> Result<Ledger> {
    let exec = perturbation
        .map(|p| p.execution(s.instrument()))
        .unwrap_or_default();
    run_with_execution(s, strategy, exec, seed, config_digest(s, strategy, perturbation, seed))
}

/// [`run_backtest`] with an explicit execution model.
pub fn run_with_execution(
    s: &Series,
    strategy: &StrategyConfig,
    exec: ExecutionModel,
    seed: u64,
    config_digest: String,
) -> Result<Ledger> {
    strategy.validate()?;
    let warmup = strategy.warmup_bars().max(1);
    if warmup >= s.len() {
        return Err(Error::WarmupTooLong {
            warmup,
            len: s.len(),
        });
    }
    if !(0.0..=1.0).contains(&exec.skip_probability) {
        return Err(Error::InvalidArgument(format!(
            "skip probability {} outside [0, 1]",
            exec.skip_probability
        )));
    }
    let vols = match strategy.vol_window() {
        Some(w) => rolling_volatility(s, w)?,
        None => vec![None; s.len()],
    };
    let instrument = s.instrument();
    let multiplier = exec
        .fee_multiplier
        .map_or(instrument.fee_multiplier, |m| m.max(instrument.fee_multiplier));
    let fee_bp = i64::from(multiplier) * i64::from(instrument.slippage_bp);

    let mut skip_rng = rng::substream(seed, "skip_trade", exec.stream);
    let mut state = strategy.initial_state(instrument.round_trip_fee_bp())?;
    let mut book = Book {
        series: s,
        exec,
        fee_bp,
        open: None,
        trades: Vec::new(),
        closed_net: 0,
    };
    let mut pending: VecDeque<PendingOrder> = VecDeque::new();
    let quotes = s.quotes();
    let mut equity = Vec::with_capacity(s.len());
    equity.push(EquityPoint {
        timestamp: quotes[0].timestamp,
        cum_net_bp: 0,
    });

    for k in 1..s.len() {
        while pending.front().is_some_and(|o| o.due_bar <= k) {
            let order = pending.pop_front().expect("checked above");
            book.fill(k, order.target, order.reason);
        }
        let bar = Bar {
            ret: (quotes[k].close as f64 / quotes[k - 1].close as f64).ln(),
            vol: vols[k],
            price: quotes[k].close,
        };
        if k < warmup {
            state = state.observe(&bar);
        } else {
            let committed = pending.back().map_or(book.position(), |o| o.target);
            let (next, intent) = strategy.signal(state, &bar);
            state = next;
            let mut target = intent.target(committed);
            if target != committed && target != Position::Flat && exec.skip_probability > 0.0 {
                let skip = skip_rng.random::<f64>() < exec.skip_probability;
                if skip {
                    target = Position::Flat;
                }
            }
            if target != state.position {
                state.sync_position(target, Some(bar.price));
            }
            if target != committed {
                let reason = intent_reason(&intent);
                if exec.delay_bars == 0 {
                    book.fill(k, target, reason);
                } else {
                    pending.push_back(PendingOrder {
                        due_bar: k + exec.delay_bars,
                        target,
                        reason,
                    });
                }
            }
            if let (Some(limit), Some(open), true) = (exec.forced_exit_bars, book.open, pending.is_empty()) {
                if (k - open.entry_bar) as u64 >= limit {
                    book.close_position(k, ExitReason::ForcedExit);
                    state.sync_position(Position::Flat, None);
                }
            }
        }
        equity.push(EquityPoint {
            timestamp: quotes[k].timestamp,
            cum_net_bp: book.equity(k),
        });
    }

    let last = s.len() - 1;
    while let Some(order) = pending.pop_front() {
        book.fill(last, order.target, ExitReason::EndOfData);
    }
    book.close_position(last, ExitReason::EndOfData);
    if let Some(e) = equity.last_mut() {
        e.cum_net_bp = book.closed_net;
    }

    Ok(Ledger {
        trades: book.trades,
        equity,
        config_digest,
    })
}

fn intent_reason(intent: &OrderIntent) -> ExitReason {
    intent.reason.map_or(ExitReason::Crossing, ExitReason::from)
}

pub const SHARPE_CONVENTION: &str =
    "closed-trade net_bp summed per UTC calendar day over every day with quotes; mean / sample std, times sqrt(days_per_year)";

pub const DEFAULT_DAYS_PER_YEAR: f64 = 252.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `None` when undefined (fewer than two days or zero variance).
    pub sharpe: Option<f64>,
    pub sharpe_convention: String,
    pub days_per_year: f64,
    pub trading_days: usize,
    pub total_net_bp: i64,
    pub n_trades: usize,
    pub mean_trade_bp: Option<f64>,
    /// Root-mean-square deviation of trade net_bp about the mean.
    pub rms_trade_bp: Option<f64>,
    pub mean_duration_bars: Option<f64>,
    /// `(net_bp, count)` with 1 bp bins.
    pub return_histogram: Vec<(i64, u64)>,
    /// `(duration_bars, count)` with 1 bar bins.
    pub duration_histogram: Vec<(u64, u64)>,
}

const SECONDS_PER_DAY: i64 = 86_400;

/// Daily closed-trade P&L over every calendar day present in the equity
/// curve.
pub fn daily_net_bp(l: &Ledger) -> Vec<i64> {
    let mut days: BTreeMap<i64, i64> = l
        .equity
        .iter()
        .map(|e| (e.timestamp.div_euclid(SECONDS_PER_DAY), 0))
        .collect();
    for t in &l.trades {
        *days.entry(t.exit_time.div_euclid(SECONDS_PER_DAY)).or_insert(0) += t.net_bp;
    }
    days.into_values().collect()
}

/// Annualised Sharpe ratio of a daily P&L vector.
pub fn sharpe_ratio(daily: &[i64], days_per_year: f64) -> Option<f64> {
    let xs: Vec<f64> = daily.iter().map(|&d| d as f64).collect();
    let mean = crate::stats::mean(&xs)?;
    let sd = crate::stats::sample_std(&xs)?;
    (sd > 0.0).then(|| mean / sd * days_per_year.sqrt())
}

pub fn compute_metrics(l: &Ledger, days_per_year: f64) -> Metrics {
    let daily = daily_net_bp(l);
    let nets: Vec<f64> = l.trades.iter().map(|t| t.net_bp as f64).collect();
    let durations: Vec<f64> = l.trades.iter().map(|t| t.duration_bars as f64).collect();
    let mut returns = BTreeMap::new();
    let mut lengths = BTreeMap::new();
    for t in &l.trades {
        *returns.entry(t.net_bp).or_insert(0u64) += 1;
        *lengths.entry(t.duration_bars).or_insert(0u64) += 1;
    }
    Metrics {
        sharpe: sharpe_ratio(&daily, days_per_year),
        sharpe_convention: SHARPE_CONVENTION.to_string(),
        days_per_year,
        trading_days: daily.len(),
        total_net_bp: l.total_net_bp(),
        n_trades: l.trades.len(),
        mean_trade_bp: crate::stats::mean(&nets),
        rms_trade_bp: crate::stats::rms_about_mean(&nets),
        mean_duration_bars: crate::stats::mean(&durations),
        return_histogram: returns.into_iter().collect(),
        duration_histogram: lengths.into_iter().collect(),
    }
}

pub const TRADES_HEADER: &str =
    "entry_time,exit_time,direction,entry_price,exit_price,gross_bp,fee_bp,net_bp,duration_bars,exit_reason";

pub fn equity_csv(l: &Ledger) -> String {
    let mut out = format!("# config_digest={}\ntimestamp,cum_net_bp\n", l.config_digest);
    for e in &l.equity {
        let _ = writeln!(out, "{},{}", e.timestamp, e.cum_net_bp);
    }
    out
}

pub fn trades_csv(l: &Ledger) -> String {
    let mut out = format!("# config_digest={}\n{TRADES_HEADER}\n", l.config_digest);
    for t in &l.trades {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            t.entry_time,
            t.exit_time,
            t.direction.as_str(),
            t.entry_price,
            t.exit_price,
            t.gross_bp,
            t.fee_bp,
            t.net_bp,
            t.duration_bars,
            t.exit_reason.as_str()
        );
    }
    out
}

pub fn metrics_json(l: &Ledger, m: &Metrics) -> Result<String> {
    let doc = serde_json::json!({
        "config_digest": l.config_digest,
        "metrics": m,
    });
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

/// Paths written by [`export_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub equity: std::path::PathBuf,
    pub trades: std::path::PathBuf,
    pub metrics: std::path::PathBuf,
}

/// Writes `equity.csv`, `trades.csv` and `metrics.json` into `dir`.
pub fn export_report(l: &Ledger, m: &Metrics, dir: impl AsRef<Path>) -> Result<ReportFiles> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        equity: dir.join("equity.csv"),
        trades: dir.join("trades.csv"),
        metrics: dir.join("metrics.json"),
    };
    let write = |path: &Path, body: String| std::fs::write(path, body).map_err(|e| Error::io(path, e));
    write(&files.equity, equity_csv(l))?;
    write(&files.trades, trades_csv(l))?;
    write(&files.metrics, metrics_json(l, m)?)?;
    Ok(files)
}

/// Parses a trades CSV written by [`export_report`].
pub fn read_trades_csv(path: impl AsRef<Path>) -> Result<Vec<Trade>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut trades = Vec::new();
    let mut header_seen = false;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let malformed = |msg: &str| Error::MalformedRow {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: msg.to_string(),
        };
        if !header_seen {
            if line != TRADES_HEADER {
                return Err(malformed("unexpected trades header"));
            }
            header_seen = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(malformed("expected 10 fields"));
        }
        let int = |i: usize| f[i].parse::<i64>().map_err(|_| malformed("bad integer"));
        trades.push(Trade {
            entry_time: int(0)?,
            exit_time: int(1)?,
            direction: match f[2] {
                "long" => Side::Long,
                "short" => Side::Short,
                _ => return Err(malformed("bad direction")),
            },
            entry_price: int(3)?,
            exit_price: int(4)?,
            gross_bp: int(5)?,
            fee_bp: int(6)?,
            net_bp: int(7)?,
            duration_bars: f[8].parse().map_err(|_| malformed("bad duration"))?,
            exit_reason: ExitReason::parse(f[9]).ok_or_else(|| malformed("bad exit reason"))?,
        });
    }
    Ok(trades)
}
