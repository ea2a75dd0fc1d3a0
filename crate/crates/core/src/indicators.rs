//! Trend and volatility indicators: exponential return accumulators,
//! trailing volatility, moving-average crossings, the crossing-density
//! Hurst probe and the rescaled-range Hurst estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::Series;
use crate::stats::linear_fit;

/// Exponentially decaying sum of relative price changes with memory
/// `tau_bars`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub tau_bars: f64,
    pub value: f64,
}

impl EmaState {
    pub fn new(tau_bars: f64) -> Result<Self> {
        if !(tau_bars.is_finite() && tau_bars > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "EMA memory must be positive, got {tau_bars}"
            )));
        }
        Ok(Self {
            tau_bars,
            value: 0.0,
        })
    }

    /// Per-bar decay factor `exp(-1/tau)`.
    pub fn decay(&self) -> f64 {
        (-1.0 / self.tau_bars).exp()
    }

    /// Decays the accumulator by one bar and adds `ret`.
    #[must_use]
    pub fn step(self, ret: f64) -> Self {
        Self {
            value: self.decay() * self.value + ret,
            ..self
        }
    }

    /// Advances one bar treating `ret` as accrued uniformly across the bar,
    /// i.e. the exact kernel integral over a piecewise-linear log price.
    /// Sampling the same path at a coarser bar with a proportionally
    /// shorter memory yields the same accumulator at shared timestamps.
    #[must_use]
    pub fn step_bar(self, ret: f64) -> Self {
        self.step(bar_weight(self.tau_bars) * ret)
    }
}

/// Free-function form of [`EmaState::step`].
pub fn ema_step(state: EmaState, ret: f64) -> EmaState {
    state.step(ret)
}

/// Integral of `exp(-s/tau)` over one bar: `tau * (1 - exp(-1/tau))`.
pub fn bar_weight(tau_bars: f64) -> f64 {
    -tau_bars * (-1.0 / tau_bars).exp_m1()
}

/// Accumulator path over `returns` using the bar-integrated update,
/// starting from zero.
pub fn ema_path(returns: &[f64], tau_bars: f64) -> Result<Vec<f64>> {
    let mut state = EmaState::new(tau_bars)?;
    Ok(returns
        .iter()
        .map(|&r| {
            state = state.step_bar(r);
            state.value
        })
        .collect())
}

/// Scale applied to volatilities: relative returns expressed in basis
/// points of price.
pub const VOL_BP_SCALE: f64 = 1e4;

/// Trailing sample standard deviation of the last `window_bars` one-bar log
/// returns, in basis points (`1e4 *` relative). Entry `k` covers returns
/// ending at bar `k`; the first `window_bars` entries are warm-up and
/// reported as `None`.
pub fn rolling_volatility(s: &Series, window_bars: usize) -> Result<Vec<Option<f64>>> {
    if window_bars < 2 {
        return Err(Error::InvalidArgument(format!(
            "volatility window must be >= 2, got {window_bars}"
        )));
    }
    if s.len() < window_bars + 1 {
        return Err(Error::InsufficientData {
            needed: window_bars + 1,
            got: s.len(),
        });
    }
    let closes: Vec<f64> = s.closes().map(|c| c as f64).collect();
    // ret[k] is the return ending at bar k + 1
    let ret: Vec<f64> = closes.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    let w = window_bars as f64;
    let mut out = vec![None; s.len()];
    let (mut sum, mut sumsq) = (0.0f64, 0.0f64);
    for (i, &r) in ret.iter().enumerate() {
        sum += r;
        sumsq += r * r;
        if i >= window_bars {
            let old = ret[i - window_bars];
            sum -= old;
            sumsq -= old * old;
        }
        if i + 1 >= window_bars {
            // refresh the running sums periodically to stop drift
            if i % 1024 == 0 {
                let win = &ret[i + 1 - window_bars..=i];
                sum = win.iter().sum();
                sumsq = win.iter().map(|r| r * r).sum();
            }
            let var = ((sumsq - sum * sum / w) / (w - 1.0)).max(0.0);
            out[i + 1] = Some(var.sqrt() * VOL_BP_SCALE);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn sign(self) -> i64 {
        match self {
            Direction::Up => 1,
            Direction::Down => -1,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crossing {
    pub index: usize,
    pub direction: Direction,
}

/// Streaming crossing detector over a difference `fast - slow`.
///
/// Zero differences never fire and never reset the remembered sign, so an
/// exact tie is resolved on the next bar with a nonzero difference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossingTracker {
    last_sign: i8,
}

impl CrossingTracker {
    pub fn update(&mut self, diff: f64) -> Option<Direction> {
        let sign = if diff > 0.0 {
            1
        } else if diff < 0.0 {
            -1
        } else {
            0
        };
        if sign == 0 {
            return None;
        }
        let prev = std::mem::replace(&mut self.last_sign, sign);
        match (prev, sign) {
            (-1, 1) => Some(Direction::Up),
            (1, -1) => Some(Direction::Down),
            _ => None,
        }
    }

    /// Sign of the most recent nonzero difference (0 before any).
    pub fn state(&self) -> i8 {
        self.last_sign
    }
}

/// Indices where `fast` crosses `slow`, with direction `Up` when `fast`
/// moves above.
pub fn detect_crossings(fast: &[f64], slow: &[f64]) -> Result<Vec<Crossing>> {
    if fast.len() != slow.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            fast.len(),
            slow.len()
        )));
    }
    let mut tracker = CrossingTracker::default();
    Ok(fast
        .iter()
        .zip(slow)
        .enumerate()
        .filter_map(|(index, (f, s))| {
            tracker
                .update(f - s)
                .map(|direction| Crossing { index, direction })
        })
        .collect())
}

/// Uniform-window moving average of the closes; entry `k` averages closes
/// `k + 1 - window ..= k`, so the output has `len - window + 1` entries.
pub fn simple_moving_average(s: &Series, window: usize) -> Result<Vec<f64>> {
    if window == 0 || window > s.len() {
        return Err(Error::InvalidArgument(format!(
            "moving-average window {window} invalid for {} bars",
            s.len()
        )));
    }
    let prefix = prefix_sums(s);
    Ok((window..=s.len())
        .map(|end| (prefix[end] - prefix[end - window]) as f64 / window as f64)
        .collect())
}

fn prefix_sums(s: &Series) -> Vec<i128> {
    let mut prefix = Vec::with_capacity(s.len() + 1);
    prefix.push(0i128);
    let mut acc = 0i128;
    for c in s.closes() {
        acc += i128::from(c);
        prefix.push(acc);
    }
    prefix
}

/// Number of sign changes of `SMA(t1) - SMA(t2)` and the number of bars
/// where both averages exist. Uses exact integer comparisons.
fn count_sma_crossings(prefix: &[i128], t1: usize, t2: usize) -> (usize, usize) {
    let n = prefix.len() - 1;
    let (a, b) = (t1 as i128, t2 as i128);
    let mut tracker = CrossingTracker::default();
    let mut count = 0;
    for end in t2..=n {
        let fast = prefix[end] - prefix[end - t1];
        let slow = prefix[end] - prefix[end - t2];
        // sign of fast/t1 - slow/t2
        let diff = b * fast - a * slow;
        if tracker.update(diff.signum() as f64).is_some() {
            count += 1;
        }
    }
    (count, n + 1 - t2)
}

/// One member of the crossing-density family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub t1_bars: usize,
    pub delta_t: f64,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingDensityEstimate {
    pub t1_bars: usize,
    pub t2_bars: usize,
    /// `(t2 - t1) / t1`.
    pub delta_t: f64,
    /// Crossings per usable bar for the requested pair.
    pub density: f64,
    /// `1 +` the log-log slope of density against `dT (1 - dT)`.
    pub hurst_implied: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    /// Fewer than `100 * t2` bars were available.
    pub low_confidence: bool,
    pub family: Vec<DensityPoint>,
}

/// Short-window lengths regressed against a shared `t2`: `dT = (t2-t1)/t1`
/// must stay inside `(0, 1)`, so `t1` ranges over `(t2/2, t2)`.
pub fn density_family(t2: usize) -> Vec<usize> {
    let mut family: Vec<usize> = (1..=9)
        .map(|j| (t2 * (10 + j)).div_ceil(20))
        .filter(|&t1| 2 * t1 > t2 && t1 < t2)
        .collect();
    family.dedup();
    family
}

/// Crossing density of two uniform moving averages and the Hurst exponent
/// implied by its scaling `rho ~ [dT (1 - dT)]^(H - 1) / t2`.
///
/// The proportionality constant is never estimated: `H` comes from the
/// log-log slope across [`density_family`]`(t2)`.
pub fn crossing_density(s: &Series, t1_bars: usize, t2_bars: usize) -> Result<CrossingDensityEstimate> {
    if t1_bars < 1 || t1_bars >= t2_bars {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= t1 < t2, got t1 = {t1_bars}, t2 = {t2_bars}"
        )));
    }
    if t2_bars * 10 > s.len() {
        return Err(Error::InsufficientData {
            needed: t2_bars * 10,
            got: s.len(),
        });
    }
    let prefix = prefix_sums(s);
    let delta = |t1: usize| (t2_bars - t1) as f64 / t1 as f64;
    let (count, usable) = count_sma_crossings(&prefix, t1_bars, t2_bars);

    let family: Vec<DensityPoint> = density_family(t2_bars)
        .into_iter()
        .map(|t1| {
            let (c, u) = count_sma_crossings(&prefix, t1, t2_bars);
            DensityPoint {
                t1_bars: t1,
                delta_t: delta(t1),
                density: c as f64 / u as f64,
            }
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = family
        .iter()
        .filter(|p| p.density > 0.0)
        .map(|p| ((p.delta_t * (1.0 - p.delta_t)).ln(), p.density.ln()))
        .unzip();
    let fit = linear_fit(&xs, &ys).ok_or_else(|| {
        Error::Degenerate(format!(
            "fewer than two crossing-density points with t2 = {t2_bars}"
        ))
    })?;
    Ok(CrossingDensityEstimate {
        t1_bars,
        t2_bars,
        delta_t: delta(t1_bars),
        density: count as f64 / usable as f64,
        hurst_implied: fit.slope + 1.0,
        slope: fit.slope,
        slope_stderr: fit.slope_stderr,
        low_confidence: s.len() < 100 * t2_bars,
        family,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HurstMethod {
    RescaledRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HurstEstimate {
    pub h: f64,
    pub stderr: f64,
    pub method: HurstMethod,
}

pub const MIN_HURST_SAMPLES: usize = 512;

/// Classical rescaled-range estimate: slope of `log(R/S)` against `log n`
/// for dyadic block sizes `16 <= n <= len/4`, with `R/S` averaged over
/// non-overlapping blocks.
pub fn hurst_rescaled_range(returns: &[f64]) -> Result<HurstEstimate> {
    if returns.len() < MIN_HURST_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_HURST_SAMPLES,
            got: returns.len(),
        });
    }
    let mut log_n = Vec::new();
    let mut log_rs = Vec::new();
    let mut n = 16;
    while n <= returns.len() / 4 {
        let mut total = 0.0;
        let mut used = 0usize;
        for block in returns.chunks_exact(n) {
            if let Some(rs) = rescaled_range(block) {
                total += rs;
                used += 1;
            }
        }
        if used > 0 {
            log_n.push((n as f64).ln());
            log_rs.push((total / used as f64).ln());
        }
        n *= 2;
    }
    let fit = linear_fit(&log_n, &log_rs)
        .ok_or_else(|| Error::Degenerate("rescaled range undefined (constant returns)".into()))?;
    if !(fit.slope > 0.0 && fit.slope < 1.0) {
        return Err(Error::Degenerate(format!(
            "rescaled-range slope {} outside (0, 1)",
            fit.slope
        )));
    }
    Ok(HurstEstimate {
        h: fit.slope,
        stderr: fit.slope_stderr,
        method: HurstMethod::RescaledRange,
    })
}

fn rescaled_range(block: &[f64]) -> Option<f64> {
    let n = block.len() as f64;
    let mean = block.iter().sum::<f64>() / n;
    let (mut cum, mut lo, mut hi, mut ss) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for &x in block {
        let d = x - mean;
        cum += d;
        lo = lo.min(cum);
        hi = hi.max(cum);
        ss += d * d;
    }
    let std = (ss / n).sqrt();
    // relative guard: a constant block has only rounding-level deviations
    let scale = mean.abs().max(std);
    (std > 1e-12 * scale && std > 0.0 && hi - lo > 0.0).then(|| (hi - lo) / std)
}
