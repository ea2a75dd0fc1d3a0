//! In-sample parameter search and the in/out/live validation protocol.
//!
//! The search only ever sees the in-sample series. [`DataSource`] gives the
//! protocol a single choke point through which every segment is read, so
//! isolation can be checked by substituting a logging implementation.

use std::collections::HashSet;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{compute_metrics, run_backtest, DEFAULT_DAYS_PER_YEAR};
use crate::error::{Error, Result};
use crate::rng;
use crate::robustness::randomize_series;
use crate::series::{split, SampleSplit, Series};
use crate::strategy::{GateSettings, StrategyConfig, StrategyParams};

/// Inclusive grid `lo, lo + step, ..., <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl ParamRange {
    pub fn new(lo: f64, hi: f64, step: f64) -> Self {
        Self { lo, hi, step }
    }

    pub fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v, step: 0.0 }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = self.lo.is_finite()
            && self.hi.is_finite()
            && self.lo <= self.hi
            && self.step.is_finite()
            && (self.step > 0.0 || (self.step == 0.0 && self.lo == self.hi));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad range for {name}: {self:?}")))
        }
    }

    pub fn count(&self) -> usize {
        if self.step == 0.0 {
            1
        } else {
            ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1
        }
    }

    pub fn value(&self, k: usize) -> f64 {
        (self.lo + k as f64 * self.step).min(self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub tau1: ParamRange,
    pub tau2: ParamRange,
    pub tau3: ParamRange,
    pub tau4: ParamRange,
    pub vol_lo: ParamRange,
    pub vol_hi: ParamRange,
    pub profit_exit_bp: ParamRange,
    pub loss_exit_bp: ParamRange,
    #[serde(default)]
    pub settings: GateSettings,
}

type GridPoint = [usize; StrategyParams::COUNT];

impl SearchSpace {
    const NAMES: [&'static str; StrategyParams::COUNT] = [
        "tau1",
        "tau2",
        "tau3",
        "tau4",
        "vol_lo",
        "vol_hi",
        "profit_exit_bp",
        "loss_exit_bp",
    ];

    fn ranges(&self) -> [ParamRange; StrategyParams::COUNT] {
        [
            self.tau1,
            self.tau2,
            self.tau3,
            self.tau4,
            self.vol_lo,
            self.vol_hi,
            self.profit_exit_bp,
            self.loss_exit_bp,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (r, name) in self.ranges().iter().zip(Self::NAMES) {
            r.validate(name)?;
        }
        self.settings.validate()
    }

    /// Number of grid points, feasible or not (saturating).
    pub fn grid_size(&self) -> u128 {
        self.ranges()
            .iter()
            .fold(1u128, |acc, r| acc.saturating_mul(r.count() as u128))
    }

    fn params_at(&self, p: &GridPoint) -> StrategyParams {
        let r = self.ranges();
        let v = |i: usize| r[i].value(p[i]);
        StrategyParams {
            tau1: v(0),
            tau2: v(1),
            tau3: v(2),
            tau4: v(3),
            vol_lo: v(4),
            vol_hi: v(5),
            profit_exit_bp: v(6).round() as i64,
            loss_exit_bp: v(7).round() as i64,
        }
    }

    fn decode(&self, mut index: u128) -> GridPoint {
        let mut p = [0; StrategyParams::COUNT];
        for (slot, r) in p.iter_mut().zip(self.ranges()).rev() {
            let c = r.count() as u128;
            *slot = (index % c) as usize;
            index /= c;
        }
        p
    }

    fn feasible(&self, p: &GridPoint) -> Option<StrategyParams> {
        let params = self.params_at(p);
        params.validate().ok().map(|_| params)
    }

    pub fn strategy(&self, params: StrategyParams) -> StrategyConfig {
        StrategyConfig::Gated {
            params,
            settings: self.settings,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Coarse,
    Refine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub stage: Stage,
    pub params: StrategyParams,
    pub sharpe: Option<f64>,
    pub total_net_bp: i64,
    pub n_trades: usize,
    pub error: Option<String>,
}

impl Evaluation {
    fn score(&self) -> f64 {
        self.sharpe.unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub best_params: StrategyParams,
    pub best_sharpe: Option<f64>,
    pub trace: Vec<Evaluation>,
}

/// Sharpe of one parameter set on one series; `None` when undefined.
pub fn evaluate(
    s: &Series,
    strategy: &StrategyConfig,
    seed: u64,
    days_per_year: f64,
) -> Result<(Option<f64>, i64, usize)> {
    let ledger = run_backtest(s, strategy, None, seed)?;
    let m = compute_metrics(&ledger, days_per_year);
    Ok((m.sharpe, m.total_net_bp, m.n_trades))
}

fn evaluate_all(
    s: &Series,
    space: &SearchSpace,
    points: &[(GridPoint, StrategyParams)],
    stage: Stage,
    seed: u64,
) -> Vec<Evaluation> {
    points
        .par_iter()
        .map(|(_, params)| match evaluate(s, &space.strategy(*params), seed, DEFAULT_DAYS_PER_YEAR) {
            Ok((sharpe, total_net_bp, n_trades)) => Evaluation {
                stage,
                params: *params,
                sharpe,
                total_net_bp,
                n_trades,
                error: None,
            },
            Err(e) => Evaluation {
                stage,
                params: *params,
                sharpe: None,
                total_net_bp: 0,
                n_trades: 0,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

/// Feasible grid points for the coarse pass: the whole grid when small,
/// otherwise a seeded sample.
fn coarse_points(space: &SearchSpace, want: usize, seed: u64) -> Vec<(GridPoint, StrategyParams)> {
    const ENUMERATE_LIMIT: u128 = 1 << 20;
    let total = space.grid_size();
    let mut out = Vec::new();
    if total <= ENUMERATE_LIMIT {
        let feasible: Vec<_> = (0..total)
            .map(|i| space.decode(i))
            .filter_map(|p| space.feasible(&p).map(|q| (p, q)))
            .collect();
        if feasible.len() <= want {
            return feasible;
        }
        let mut r = rng::substream(seed, "optimize_coarse", 0);
        let mut picked = sample(&mut r, feasible.len(), want).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| feasible[i]));
        return out;
    }
    let mut r = rng::substream(seed, "optimize_coarse", 1);
    let mut seen = HashSet::new();
    let attempts = want.saturating_mul(200).max(10_000);
    for _ in 0..attempts {
        if out.len() >= want {
            break;
        }
        let idx = rand::Rng::random_range(&mut r, 0..total);
        if seen.insert(idx) {
            let p = space.decode(idx);
            if let Some(params) = space.feasible(&p) {
                out.push((p, params));
            }
        }
    }
    out
}

/// Coarse grid pass followed by one-step coordinate refinement around the
/// incumbent. At most `budget` backtests are run.
pub fn optimize(in_series: &Series, space: &SearchSpace, budget: usize, seed: u64) -> Result<OptimizeResult> {
    space.validate()?;
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be at least 1".into()));
    }
    let coarse_budget = if budget <= 2 { budget } else { budget.div_ceil(2) };
    let coarse = coarse_points(space, coarse_budget, seed);
    if coarse.is_empty() {
        return Err(Error::EmptySearchSpace);
    }
    let mut visited: HashSet<GridPoint> = coarse.iter().map(|(p, _)| *p).collect();
    let mut trace = evaluate_all(in_series, space, &coarse, Stage::Coarse, seed);
    let mut best = 0;
    for (i, e) in trace.iter().enumerate() {
        if e.score() > trace[best].score() {
            best = i;
        }
    }
    let mut incumbent = coarse[best].0;

    let counts: Vec<usize> = space.ranges().iter().map(ParamRange::count).collect();
    while trace.len() < budget {
        let mut neighbours = Vec::new();
        for dim in 0..StrategyParams::COUNT {
            for delta in [-1isize, 1] {
                let k = incumbent[dim] as isize + delta;
                if k < 0 || k as usize >= counts[dim] {
                    continue;
                }
                let mut p = incumbent;
                p[dim] = k as usize;
                if visited.contains(&p) {
                    continue;
                }
                visited.insert(p);
                if let Some(params) = space.feasible(&p) {
                    neighbours.push((p, params));
                }
            }
        }
        neighbours.truncate(budget - trace.len());
        if neighbours.is_empty() {
            break;
        }
        let evals = evaluate_all(in_series, space, &neighbours, Stage::Refine, seed);
        let offset = trace.len();
        trace.extend(evals);
        let mut moved = false;
        for (i, (p, _)) in neighbours.iter().enumerate() {
            if trace[offset + i].score() > trace[best].score() {
                best = offset + i;
                incumbent = *p;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    Ok(OptimizeResult {
        best_params: trace[best].params,
        best_sharpe: trace[best].sharpe,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    In,
    Out,
    Live,
}

/// Source of the three chronological segments.
pub trait DataSource: Sync {
    fn fetch(&self, segment: Segment) -> Result<Series>;
}

/// Segments cut from one series by a [`SampleSplit`].
#[derive(Debug, Clone)]
pub struct SplitSource {
    segments: [Series; 3],
}

impl SplitSource {
    pub fn new(s: &Series, sp: &SampleSplit) -> Result<Self> {
        let (a, b, c) = split(s, sp)?;
        Ok(Self { segments: [a, b, c] })
    }

    pub fn from_segments(in_sample: Series, out_sample: Series, live: Series) -> Self {
        Self {
            segments: [in_sample, out_sample, live],
        }
    }
}

impl DataSource for SplitSource {
    fn fetch(&self, segment: Segment) -> Result<Series> {
        let i = match segment {
            Segment::In => 0,
            Segment::Out => 1,
            Segment::Live => 2,
        };
        Ok(self.segments[i].clone())
    }
}

/// Reads the in-sample segment from `source` and optimizes on it.
pub fn optimize_source(
    source: &dyn DataSource,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
) -> Result<OptimizeResult> {
    let in_series = source.fetch(Segment::In)?;
    if in_series.is_empty() {
        return Err(Error::EmptyInSample);
    }
    optimize(&in_series, space, budget, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub min_out_sharpe: f64,
    /// Allowed drop of the randomized in-sample Sharpe, as a fraction of
    /// the nominal in-sample Sharpe's magnitude.
    pub max_randomized_degradation: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            min_out_sharpe: 0.5,
            max_randomized_degradation: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDecision {
    Accepted,
    RejectedOutSample,
    RejectedRandomization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub best_params: StrategyParams,
    pub in_sharpe: Option<f64>,
    pub randomized_in_sharpe: Option<f64>,
    /// Absent when the randomization gate already rejected.
    pub out_sharpe: Option<f64>,
    /// Present only for accepted systems.
    pub live_sharpe: Option<f64>,
    pub live_evaluated: bool,
    pub gate_decision: GateDecision,
    pub thresholds: Thresholds,
    pub seed: u64,
}

/// True when the randomized Sharpe stays within the allowed degradation.
pub fn randomization_passes(nominal: Option<f64>, randomized: Option<f64>, max_degradation: f64) -> bool {
    match (nominal, randomized) {
        (Some(n), Some(r)) => r >= n - max_degradation * n.abs(),
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Pending,
    Decided(GateDecision),
    LiveDone,
}

/// Stepwise validation: [`Validation::run_gate`] must accept before the
/// live segment may be read, and it may be read once.
pub struct Validation<'a> {
    source: &'a dyn DataSource,
    strategy: StrategyConfig,
    params: StrategyParams,
    thresholds: Thresholds,
    seed: u64,
    phase: Phase,
    in_sharpe: Option<f64>,
    randomized_in_sharpe: Option<f64>,
    out_sharpe: Option<f64>,
    live_sharpe: Option<f64>,
}

impl<'a> Validation<'a> {
    pub fn new(
        params: StrategyParams,
        settings: GateSettings,
        source: &'a dyn DataSource,
        thresholds: Thresholds,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            source,
            strategy: StrategyConfig::Gated { params, settings },
            params,
            thresholds,
            seed,
            phase: Phase::Pending,
            in_sharpe: None,
            randomized_in_sharpe: None,
            out_sharpe: None,
            live_sharpe: None,
        })
    }

    fn sharpe(&self, s: &Series) -> Result<Option<f64>> {
        Ok(evaluate(s, &self.strategy, self.seed, DEFAULT_DAYS_PER_YEAR)?.0)
    }

    /// Nominal in-sample, randomized in-sample, then out-sample.
    pub fn run_gate(&mut self) -> Result<GateDecision> {
        if let Phase::Decided(d) = self.phase {
            return Ok(d);
        }
        if self.phase == Phase::LiveDone {
            return Err(Error::ProtocolViolation("gate already completed".into()));
        }
        let in_series = self.source.fetch(Segment::In)?;
        self.in_sharpe = self.sharpe(&in_series)?;
        let randomized = randomize_series(&in_series, rng::derive_seed(self.seed, "validate_randomize", 0))?;
        self.randomized_in_sharpe = self.sharpe(&randomized)?;
        let decision = if !randomization_passes(
            self.in_sharpe,
            self.randomized_in_sharpe,
            self.thresholds.max_randomized_degradation,
        ) {
            GateDecision::RejectedRandomization
        } else {
            let out = self.source.fetch(Segment::Out)?;
            self.out_sharpe = self.sharpe(&out)?;
            if self.out_sharpe.is_some_and(|s| s >= self.thresholds.min_out_sharpe) {
                GateDecision::Accepted
            } else {
                GateDecision::RejectedOutSample
            }
        };
        self.phase = Phase::Decided(decision);
        Ok(decision)
    }

    /// Evaluates the live segment. Fails unless the gate has accepted and
    /// the live segment has not been evaluated yet.
    pub fn evaluate_live(&mut self) -> Result<Option<f64>> {
        match self.phase {
            Phase::Decided(GateDecision::Accepted) => {}
            Phase::LiveDone => {
                return Err(Error::ProtocolViolation("live sample already evaluated".into()));
            }
            _ => {
                return Err(Error::ProtocolViolation(
                    "live sample requested before out-sample acceptance".into(),
                ));
            }
        }
        let live = self.source.fetch(Segment::Live)?;
        self.phase = Phase::LiveDone;
        self.live_sharpe = self.sharpe(&live)?;
        Ok(self.live_sharpe)
    }

    pub fn report(&self) -> Result<ValidationReport> {
        let gate_decision = match self.phase {
            Phase::Pending => return Err(Error::ProtocolViolation("gate not run".into())),
            Phase::Decided(d) => d,
            Phase::LiveDone => GateDecision::Accepted,
        };
        Ok(ValidationReport {
            best_params: self.params,
            in_sharpe: self.in_sharpe,
            randomized_in_sharpe: self.randomized_in_sharpe,
            out_sharpe: self.out_sharpe,
            live_sharpe: self.live_sharpe,
            live_evaluated: self.phase == Phase::LiveDone,
            gate_decision,
            thresholds: self.thresholds,
            seed: self.seed,
        })
    }
}

/// Full protocol: gate, then the live segment once if accepted.
pub fn validate(
    params: StrategyParams,
    settings: GateSettings,
    source: &dyn DataSource,
    thresholds: Thresholds,
    seed: u64,
) -> Result<ValidationReport> {
    let mut v = Validation::new(params, settings, source, thresholds, seed)?;
    if v.run_gate()? == GateDecision::Accepted {
        v.evaluate_live()?;
    }
    v.report()
}
