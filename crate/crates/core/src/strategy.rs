//! Trend-following signal generators.
//!
//! Both systems work on the accumulator `phi_tau = sum e^(-age/tau) dP/P`,
//! which equals log price minus its exponential average with memory `tau`.
//! Consequently `phi(tau_long) - phi(tau_short)` is the gap between the short
//! and the long exponential averages of log price, and its sign changes are
//! the classic moving-average crossings.
//!
//! * [`baseline_signal`]: the single-accumulator `+-Phi` reversal system.
//! * [`gated_signal`]: four memory lengths, a volatility regime gate and
//!   extreme-P&L exits, with exactly eight free parameters
//!   ([`StrategyParams`]).
//!
//! Signal functions are pure: they take a state by value and return the
//! next state plus an [`OrderIntent`]. The state assumes its own intents are
//! executed; an executor that deviates (skipped or forced trades) calls
//! [`SignalState::sync_position`].

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicators::{CrossingTracker, Direction, EmaState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    #[default]
    Flat,
    Long,
    Short,
}

impl Position {
    pub fn sign(self) -> i64 {
        match self {
            Position::Flat => 0,
            Position::Long => 1,
            Position::Short => -1,
        }
    }

    pub fn from_direction(d: Direction) -> Self {
        match d {
            Direction::Up => Position::Long,
            Direction::Down => Position::Short,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Position::Flat => Position::Flat,
            Position::Long => Position::Short,
            Position::Short => Position::Long,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    None,
    EnterLong,
    EnterShort,
    Exit,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    /// Moving-average (or threshold) crossing.
    Crossing,
    /// Entry taken under the stringent high-volatility trigger.
    VolGate,
    ProfitExtreme,
    LossExtreme,
    /// Baseline intermediate threshold broken.
    BreakThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrderIntent {
    pub action: Action,
    pub reason: Option<Reason>,
}

impl OrderIntent {
    pub const NONE: OrderIntent = OrderIntent {
        action: Action::None,
        reason: None,
    };

    pub fn new(action: Action, reason: Reason) -> Self {
        debug_assert!(action != Action::None);
        Self {
            action,
            reason: Some(reason),
        }
    }

    /// Position held after applying this intent to `current`.
    pub fn target(&self, current: Position) -> Position {
        match self.action {
            Action::None => current,
            Action::EnterLong => Position::Long,
            Action::EnterShort => Position::Short,
            Action::Exit => Position::Flat,
            Action::Reverse => current.opposite(),
        }
    }
}

/// Per-bar input to the signal functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bar {
    /// One-bar log return ending at this bar.
    pub ret: f64,
    /// Trailing volatility in basis points; `None` during warm-up.
    pub vol: Option<f64>,
    /// Close in ticks.
    pub price: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub tau_bars: f64,
    pub phi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub break_threshold: Option<f64>,
}

impl BaselineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_bars.is_finite() && self.tau_bars > 0.0) {
            return Err(Error::InvalidArgument("tau_bars must be positive".into()));
        }
        if !(self.phi.is_finite() && self.phi > 0.0) {
            return Err(Error::InvalidArgument("phi must be positive".into()));
        }
        if let Some(b) = self.break_threshold {
            if !(b > 0.0 && b < self.phi) {
                return Err(Error::InvalidArgument(
                    "break_threshold must lie in (0, phi)".into(),
                ));
            }
        }
        Ok(())
    }
}

/// The eight optimised parameters of the gated system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyParams {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    pub tau4: f64,
    /// Volatility band in basis points.
    pub vol_lo: f64,
    pub vol_hi: f64,
    pub profit_exit_bp: i64,
    pub loss_exit_bp: i64,
}

impl StrategyParams {
    pub const COUNT: usize = 8;

    pub fn validate(&self) -> Result<()> {
        let taus = [self.tau1, self.tau2, self.tau3, self.tau4];
        if taus.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidArgument("memory lengths must be positive".into()));
        }
        if self.tau1 >= self.tau2 || self.tau3 >= self.tau4 {
            return Err(Error::InvalidArgument(
                "need tau1 < tau2 and tau3 < tau4".into(),
            ));
        }
        if !(self.vol_lo >= 0.0 && self.vol_lo < self.vol_hi) || self.vol_lo.is_nan() {
            return Err(Error::InvalidArgument("need 0 <= vol_lo < vol_hi".into()));
        }
        if !(self.loss_exit_bp < 0 && self.profit_exit_bp > 0) {
            return Err(Error::InvalidArgument(
                "need loss_exit_bp < 0 < profit_exit_bp".into(),
            ));
        }
        Ok(())
    }

    pub fn max_tau(&self) -> f64 {
        self.tau2.max(self.tau4)
    }

    /// The parameters as a vector in declaration order.
    pub fn to_vec(&self) -> [f64; Self::COUNT] {
        [
            self.tau1,
            self.tau2,
            self.tau3,
            self.tau4,
            self.vol_lo,
            self.vol_hi,
            self.profit_exit_bp as f64,
            self.loss_exit_bp as f64,
        ]
    }
}

/// Settings of the gated system that are held fixed rather than optimised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateSettings {
    /// Trailing window of the volatility estimate.
    pub vol_window: usize,
    /// Length of the trailing P&L window driving extreme exits; one day of
    /// five-minute bars by default.
    pub pnl_window: usize,
}

impl Default for GateSettings {
    fn default() -> Self {
        Self {
            vol_window: 48,
            pnl_window: 288,
        }
    }
}

impl GateSettings {
    pub fn validate(&self) -> Result<()> {
        if self.vol_window < 2 || self.pnl_window < 1 {
            return Err(Error::InvalidArgument(
                "vol_window must be >= 2 and pnl_window >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalState {
    pub emas: [EmaState; 4],
    pair_fast: CrossingTracker,
    pair_confirm: CrossingTracker,
    /// Most recent volatility seen, basis points.
    pub vol: Option<f64>,
    pub position: Position,
    pub entry_price: Option<i64>,
    last_price: Option<i64>,
    /// Net per-bar P&L of the open position, newest last.
    pnl_window: VecDeque<i64>,
    window_len: usize,
    fee_bp: i64,
}

impl SignalState {
    fn with_taus(taus: [f64; 4], window_len: usize, fee_bp: i64) -> Result<Self> {
        Ok(Self {
            emas: [
                EmaState::new(taus[0])?,
                EmaState::new(taus[1])?,
                EmaState::new(taus[2])?,
                EmaState::new(taus[3])?,
            ],
            pair_fast: CrossingTracker::default(),
            pair_confirm: CrossingTracker::default(),
            vol: None,
            position: Position::Flat,
            entry_price: None,
            last_price: None,
            pnl_window: VecDeque::with_capacity(window_len.max(1)),
            window_len: window_len.max(1),
            fee_bp,
        })
    }

    pub fn baseline(params: &BaselineParams) -> Result<Self> {
        params.validate()?;
        Self::with_taus([params.tau_bars; 4], 1, 0)
    }

    /// `fee_bp` is the round-trip fee charged against the trailing P&L.
    pub fn gated(params: &StrategyParams, settings: &GateSettings, fee_bp: i64) -> Result<Self> {
        params.validate()?;
        settings.validate()?;
        Self::with_taus(
            [params.tau1, params.tau2, params.tau3, params.tau4],
            settings.pnl_window,
            fee_bp,
        )
    }

    /// Overrides the believed position after an execution deviated from the
    /// intent.
    pub fn sync_position(&mut self, position: Position, entry_price: Option<i64>) {
        if position == self.position {
            return;
        }
        self.position = position;
        self.entry_price = if position == Position::Flat {
            None
        } else {
            entry_price.or(self.last_price)
        };
        self.pnl_window.clear();
        if position != Position::Flat {
            self.pnl_window.push_back(-self.fee_bp);
        }
    }

    /// Sum of the trailing P&L window.
    pub fn trailing_pnl(&self) -> i64 {
        self.pnl_window.iter().sum()
    }

    /// Baseline accumulator value.
    pub fn phi(&self) -> f64 {
        self.emas[0].value
    }

    /// `phi(tau2) - phi(tau1)`: short minus long average of log price.
    pub fn fast_gap(&self) -> f64 {
        self.emas[1].value - self.emas[0].value
    }

    /// `phi(tau4) - phi(tau3)`.
    pub fn confirm_gap(&self) -> f64 {
        self.emas[3].value - self.emas[2].value
    }

    /// Updates indicators and marks the open position, without deciding.
    #[must_use]
    pub fn observe(mut self, bar: &Bar) -> Self {
        for ema in &mut self.emas {
            *ema = ema.step_bar(bar.ret);
        }
        self.pair_fast.update(self.fast_gap());
        self.pair_confirm.update(self.confirm_gap());
        self.vol = bar.vol;
        self.mark(bar.price);
        self
    }

    fn mark(&mut self, price: i64) {
        if self.position != Position::Flat {
            if let Some(last) = self.last_price {
                self.pnl_window.push_back(self.position.sign() * (price - last));
                while self.pnl_window.len() > self.window_len {
                    self.pnl_window.pop_front();
                }
            }
        }
        self.last_price = Some(price);
    }

    fn apply(&mut self, intent: OrderIntent, price: i64) {
        let target = intent.target(self.position);
        if target != self.position {
            self.position = target;
            self.pnl_window.clear();
            if target == Position::Flat {
                self.entry_price = None;
            } else {
                self.entry_price = Some(price);
                self.pnl_window.push_back(-self.fee_bp);
            }
        }
    }
}

fn act_on(direction: Direction, current: Position, reason: Reason) -> OrderIntent {
    let wanted = Position::from_direction(direction);
    match current {
        Position::Flat => OrderIntent::new(
            match direction {
                Direction::Up => Action::EnterLong,
                Direction::Down => Action::EnterShort,
            },
            reason,
        ),
        p if p == wanted => OrderIntent::NONE,
        _ => OrderIntent::new(Action::Reverse, reason),
    }
}

/// The `+-Phi` reversal system: long once `phi >= Phi`, short once
/// `phi <= -Phi`, and (optionally) flat when `|phi|` falls below the break
/// threshold while a position is open.
pub fn baseline_signal(state: SignalState, params: &BaselineParams, bar: &Bar) -> (SignalState, OrderIntent) {
    let mut state = state.observe(bar);
    let phi = state.phi();
    let intent = match state.position {
        Position::Flat if phi >= params.phi => OrderIntent::new(Action::EnterLong, Reason::Crossing),
        Position::Flat if phi <= -params.phi => OrderIntent::new(Action::EnterShort, Reason::Crossing),
        Position::Long if phi <= -params.phi => OrderIntent::new(Action::Reverse, Reason::Crossing),
        Position::Short if phi >= params.phi => OrderIntent::new(Action::Reverse, Reason::Crossing),
        Position::Long | Position::Short
            if params.break_threshold.is_some_and(|b| phi.abs() < b) =>
        {
            OrderIntent::new(Action::Exit, Reason::BreakThreshold)
        }
        _ => OrderIntent::NONE,
    };
    state.apply(intent, bar.price);
    (state, intent)
}

/// Volatility regime of a bar relative to the `[vol_lo, vol_hi]` band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Quiet,
    Normal,
    Volatile,
}

pub fn regime(vol: Option<f64>, params: &StrategyParams) -> Regime {
    match vol {
        Some(v) if v > params.vol_hi => Regime::Volatile,
        Some(v) if v >= params.vol_lo => Regime::Normal,
        _ => Regime::Quiet,
    }
}

/// The volatility-gated system.
///
/// * Exits first: when the trailing net P&L of the open position reaches
///   `profit_exit_bp` or `loss_exit_bp` the position is closed. Entries
///   only happen on crossing events, so the system then stays flat until
///   the next fresh crossing.
/// * Quiet regime (`vol < vol_lo`, or no volatility yet): no entries or
///   reversals.
/// * Normal regime: enter or reverse on crossings of the `(tau1, tau2)`
///   pair.
/// * Volatile regime (`vol > vol_hi`): a `(tau1, tau2)` crossing only acts
///   when the `(tau3, tau4)` pair currently points the same way.
pub fn gated_signal(state: SignalState, params: &StrategyParams, bar: &Bar) -> (SignalState, OrderIntent) {
    let before = state.pair_fast.state();
    let mut state = state.observe(bar);
    let crossing = match (before, state.pair_fast.state()) {
        (-1, 1) => Some(Direction::Up),
        (1, -1) => Some(Direction::Down),
        _ => None,
    };

    let intent = if state.position != Position::Flat
        && state.trailing_pnl() >= params.profit_exit_bp
    {
        OrderIntent::new(Action::Exit, Reason::ProfitExtreme)
    } else if state.position != Position::Flat && state.trailing_pnl() <= params.loss_exit_bp {
        OrderIntent::new(Action::Exit, Reason::LossExtreme)
    } else if let Some(dir) = crossing {
        match regime(state.vol, params) {
            Regime::Quiet => OrderIntent::NONE,
            Regime::Normal => act_on(dir, state.position, Reason::Crossing),
            Regime::Volatile if i64::from(state.pair_confirm.state()) == dir.sign() => {
                act_on(dir, state.position, Reason::VolGate)
            }
            Regime::Volatile => OrderIntent::NONE,
        }
    } else {
        OrderIntent::NONE
    };
    state.apply(intent, bar.price);
    (state, intent)
}

/// Either system, as selected in a run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyConfig {
    Baseline(BaselineParams),
    Gated {
        params: StrategyParams,
        #[serde(default)]
        settings: GateSettings,
    },
}

impl StrategyConfig {
    pub fn gated(params: StrategyParams) -> Self {
        StrategyConfig::Gated {
            params,
            settings: GateSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StrategyConfig::Baseline(p) => p.validate(),
            StrategyConfig::Gated { params, settings } => {
                params.validate()?;
                settings.validate()
            }
        }
    }

    /// Bars consumed before the first decision.
    pub fn warmup_bars(&self) -> usize {
        match self {
            StrategyConfig::Baseline(p) => p.tau_bars.ceil() as usize,
            StrategyConfig::Gated { params, settings } => {
                (params.max_tau().ceil() as usize).max(settings.vol_window)
            }
        }
    }

    /// Volatility window needed by the system, if any.
    pub fn vol_window(&self) -> Option<usize> {
        match self {
            StrategyConfig::Baseline(_) => None,
            StrategyConfig::Gated { settings, .. } => Some(settings.vol_window),
        }
    }

    pub fn initial_state(&self, fee_bp: i64) -> Result<SignalState> {
        match self {
            StrategyConfig::Baseline(p) => SignalState::baseline(p),
            StrategyConfig::Gated { params, settings } => SignalState::gated(params, settings, fee_bp),
        }
    }

    pub fn signal(&self, state: SignalState, bar: &Bar) -> (SignalState, OrderIntent) {
        match self {
            StrategyConfig::Baseline(p) => baseline_signal(state, p, bar),
            StrategyConfig::Gated { params, .. } => gated_signal(state, params, bar),
        }
    }
}
