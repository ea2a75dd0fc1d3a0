//! Instruments, quote series and the operations over them: CSV ingestion,
//! close-of-bar resampling, log returns and chronological sample splits.
//!
//! Prices live as integer ticks. One tick is one basis point of the
//! instrument (the unit of the last quoted digit), so every P&L figure
//! downstream is an exact integer.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

fn default_fee_multiplier() -> u32 {
    2
}

/// Contract description: how prices map onto basis points and what a round
/// trip costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentSpec {
    pub name: String,
    /// Price units per basis point, e.g. `0.0001` for a quote like `1.3802`.
    pub tick_value: f64,
    /// Per-side slippage in basis points.
    pub slippage_bp: u32,
    /// Round-trip fee expressed as a multiple of the slippage.
    #[serde(default = "default_fee_multiplier")]
    pub fee_multiplier: u32,
}

impl InstrumentSpec {
    pub fn new(name: impl Into<String>, tick_value: f64, slippage_bp: u32) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            tick_value,
            slippage_bp,
            fee_multiplier: default_fee_multiplier(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_fee_multiplier(mut self, fee_multiplier: u32) -> Result<Self> {
        self.fee_multiplier = fee_multiplier;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tick_value.is_finite() && self.tick_value > 0.0) {
            return Err(Error::InvalidInstrument(format!(
                "tick_value must be positive, got {}",
                self.tick_value
            )));
        }
        if self.fee_multiplier < 1 {
            return Err(Error::InvalidInstrument(
                "fee_multiplier must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Fees charged on one round trip, in basis points.
    pub fn round_trip_fee_bp(&self) -> i64 {
        i64::from(self.fee_multiplier) * i64::from(self.slippage_bp)
    }

    /// Converts a decimal price string to ticks, rounding half away from
    /// zero. Exact whenever `tick_value` has a short decimal expansion.
    pub fn price_to_ticks(&self, price: &str) -> Option<i64> {
        let price = price.trim();
        if let (Some((mant, scale)), Some((tick_num, tick_scale))) =
            (parse_decimal(price), self.decimal_tick())
        {
            // ticks = mant / 10^scale / (tick_num / 10^tick_scale)
            let num = mant.checked_mul(pow10(tick_scale)?)?;
            let den = tick_num.checked_mul(pow10(scale)?)?;
            return i64::try_from(div_round_half_away(num, den)).ok();
        }
        let value: f64 = price.parse().ok()?;
        if !value.is_finite() {
            return None;
        }
        let ticks = (value / self.tick_value).round();
        (ticks.abs() < 9.0e18).then_some(ticks as i64)
    }

    /// Canonical decimal rendering of a tick count.
    pub fn format_ticks(&self, ticks: i64) -> String {
        match self.decimal_tick() {
            Some((tick_num, tick_scale)) => {
                format_scaled(i128::from(ticks) * tick_num, tick_scale)
            }
            None => format!("{}", ticks as f64 * self.tick_value),
        }
    }

    /// `tick_value` as `num / 10^scale` if it has at most 12 decimals.
    fn decimal_tick(&self) -> Option<(i128, u32)> {
        (0..=12u32).find_map(|d| {
            let scaled = self.tick_value * 10f64.powi(d as i32);
            let rounded = scaled.round();
            ((scaled - rounded).abs() <= 1e-9 * rounded.max(1.0) && rounded >= 1.0)
                .then_some((rounded as i128, d))
        })
    }
}

fn pow10(exp: u32) -> Option<i128> {
    10i128.checked_pow(exp)
}

fn div_round_half_away(num: i128, den: i128) -> i128 {
    let q = num / den;
    let r = num % den;
    if 2 * r.abs() >= den.abs() {
        q + num.signum() * den.signum()
    } else {
        q
    }
}

fn parse_decimal(s: &str) -> Option<(i128, u32)> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    if int_part.len() + frac_part.len() > 30 {
        return None;
    }
    let mut mant: i128 = 0;
    for b in int_part.bytes().chain(frac_part.bytes()) {
        mant = mant * 10 + i128::from(b - b'0');
    }
    Some((if neg { -mant } else { mant }, frac_part.len() as u32))
}

fn format_scaled(value: i128, scale: u32) -> String {
    if scale == 0 {
        return value.to_string();
    }
    let sign = if value < 0 { "-" } else { "" };
    let digits = value.unsigned_abs().to_string();
    let scale = scale as usize;
    let padded = if digits.len() <= scale {
        format!("{}{}", "0".repeat(scale + 1 - digits.len()), digits)
    } else {
        digits
    };
    let (int_part, frac_part) = padded.split_at(padded.len() - scale);
    format!("{sign}{int_part}.{frac_part}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Quote {
    /// Epoch seconds, UTC.
    pub timestamp: i64,
    /// Close price in ticks.
    pub close: i64,
}

/// An ordered close-price series for one instrument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    instrument: InstrumentSpec,
    quotes: Vec<Quote>,
    bar_seconds: i64,
}

impl Series {
    /// Builds a series, checking that timestamps strictly increase and that
    /// every close is positive.
    pub fn new(instrument: InstrumentSpec, quotes: Vec<Quote>, bar_seconds: i64) -> Result<Self> {
        instrument.validate()?;
        if bar_seconds <= 0 {
            return Err(Error::InvalidSeries(format!(
                "bar_seconds must be positive, got {bar_seconds}"
            )));
        }
        for pair in quotes.windows(2) {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(Error::InvalidSeries(format!(
                    "timestamps not strictly increasing at {}",
                    pair[1].timestamp
                )));
            }
        }
        if let Some(q) = quotes.iter().find(|q| q.close <= 0) {
            return Err(Error::InvalidSeries(format!(
                "non-positive close {} at {}",
                q.close, q.timestamp
            )));
        }
        Ok(Self {
            instrument,
            quotes,
            bar_seconds,
        })
    }

    /// Evenly spaced series starting at `start`.
    pub fn from_closes(
        instrument: InstrumentSpec,
        start: i64,
        bar_seconds: i64,
        closes: impl IntoIterator<Item = i64>,
    ) -> Result<Self> {
        let quotes = closes
            .into_iter()
            .enumerate()
            .map(|(i, close)| Quote {
                timestamp: start + i as i64 * bar_seconds,
                close,
            })
            .collect();
        Self::new(instrument, quotes, bar_seconds)
    }

    pub fn instrument(&self) -> &InstrumentSpec {
        &self.instrument
    }

    pub fn quotes(&self) -> &[Quote] {
        &self.quotes
    }

    pub fn bar_seconds(&self) -> i64 {
        self.bar_seconds
    }

    pub fn len(&self) -> usize {
        self.quotes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quotes.is_empty()
    }

    pub fn closes(&self) -> impl ExactSizeIterator<Item = i64> + '_ {
        self.quotes.iter().map(|q| q.close)
    }

    pub fn timestamps(&self) -> impl ExactSizeIterator<Item = i64> + '_ {
        self.quotes.iter().map(|q| q.timestamp)
    }

    /// First `n` quotes as a new series.
    pub fn prefix(&self, n: usize) -> Series {
        self.with_quotes(self.quotes[..n.min(self.len())].to_vec())
    }

    /// Same instrument and sampling, different quotes. The caller keeps the
    /// ordering invariant.
    pub(crate) fn with_quotes(&self, quotes: Vec<Quote>) -> Series {
        Series {
            instrument: self.instrument.clone(),
            quotes,
            bar_seconds: self.bar_seconds,
        }
    }

    pub fn with_instrument(&self, instrument: InstrumentSpec) -> Result<Series> {
        instrument.validate()?;
        Ok(Series {
            instrument,
            quotes: self.quotes.clone(),
            bar_seconds: self.bar_seconds,
        })
    }

    /// Content hash identifying this series (instrument, sampling, quotes).
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.instrument.name.as_bytes());
        hasher.update(self.instrument.tick_value.to_le_bytes());
        hasher.update(self.bar_seconds.to_le_bytes());
        for q in &self.quotes {
            hasher.update(q.timestamp.to_le_bytes());
            hasher.update(q.close.to_le_bytes());
        }
        hex_string(&hasher.finalize()[..16])
    }

    /// Canonical CSV rendering (`timestamp,close`, LF endings).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(16 + self.len() * 20);
        out.push_str("timestamp,close\n");
        for q in &self.quotes {
            let _ = writeln!(out, "{},{}", q.timestamp, self.instrument.format_ticks(q.close));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Half-open `[start, end)` interval of epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: i64,
    pub end: i64,
}

impl TimeRange {
    pub fn new(start: i64, end: i64) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t < self.end
    }
}

/// Chronological in / out / live decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSplit {
    pub in_range: TimeRange,
    pub out_range: TimeRange,
    pub live_range: TimeRange,
}

impl SampleSplit {
    pub fn validate(&self) -> Result<()> {
        let ranges = [self.in_range, self.out_range, self.live_range];
        if ranges.iter().any(|r| r.start >= r.end) {
            return Err(Error::InvalidArgument("empty split interval".into()));
        }
        if self.in_range.end > self.out_range.start || self.out_range.end > self.live_range.start {
            return Err(Error::InvalidArgument(
                "split intervals must be disjoint and ordered in < out < live".into(),
            ));
        }
        Ok(())
    }
}

/// Reads a `timestamp,close` CSV file.
pub fn load_csv(path: impl AsRef<Path>, spec: &InstrumentSpec, bar_seconds: i64) -> Result<Series> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, path, spec, bar_seconds)
}

/// Parses quote CSV from any reader; `origin` only labels error messages.
/// Lines starting with `#` are comments.
pub fn read_csv(
    reader: impl Read,
    origin: &Path,
    spec: &InstrumentSpec,
    bar_seconds: i64,
) -> Result<Series> {
    spec.validate()?;
    let malformed = |line: usize, msg: String| Error::MalformedRow {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut rows: Vec<(Quote, usize)> = Vec::new();
    let mut saw_header = false;
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            saw_header = true;
            let header: Vec<_> = line.split(',').map(str::trim).collect();
            if header != ["timestamp", "close"] {
                return Err(malformed(line_no, format!("expected header `timestamp,close`, got `{line}`")));
            }
            continue;
        }
        let mut fields = line.split(',');
        let (Some(ts), Some(close), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(malformed(line_no, "expected 2 fields".into()));
        };
        let timestamp: i64 = ts
            .trim()
            .parse()
            .map_err(|_| malformed(line_no, format!("bad timestamp `{ts}`")))?;
        let close = spec
            .price_to_ticks(close)
            .ok_or_else(|| malformed(line_no, format!("bad close `{close}`")))?;
        if close <= 0 {
            return Err(malformed(line_no, format!("non-positive close `{close}`")));
        }
        rows.push((Quote { timestamp, close }, line_no));
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile);
    }
    rows.sort_by_key(|(q, _)| q.timestamp);
    for pair in rows.windows(2) {
        let (prev, (cur, line)) = (&pair[0].0, &pair[1]);
        if cur.timestamp == prev.timestamp {
            return Err(Error::DuplicateTimestamp {
                timestamp: cur.timestamp,
                line: *line,
            });
        }
        if bar_seconds > 0 && (cur.timestamp - prev.timestamp) % bar_seconds != 0 {
            return Err(malformed(
                *line,
                format!(
                    "gap {} s is not a multiple of the {bar_seconds} s bar",
                    cur.timestamp - prev.timestamp
                ),
            ));
        }
    }
    Series::new(spec.clone(), rows.into_iter().map(|(q, _)| q).collect(), bar_seconds)
}

/// Keeps the last close of every `factor` consecutive bars. A trailing
/// partial group contributes its last close, so the result has
/// `ceil(len / factor)` quotes.
pub fn resample(s: &Series, factor: usize) -> Result<Series> {
    if factor == 0 {
        return Err(Error::InvalidArgument("resample factor must be >= 1".into()));
    }
    let quotes: Vec<Quote> = s
        .quotes
        .chunks(factor)
        .filter_map(|chunk| chunk.last().copied())
        .collect();
    Ok(Series {
        instrument: s.instrument.clone(),
        quotes,
        bar_seconds: s.bar_seconds * factor as i64,
    })
}

/// `ln(close[k + lag] / close[k])` for every k.
pub fn log_returns(s: &Series, lag: usize) -> Result<Vec<f64>> {
    if lag == 0 {
        return Err(Error::InvalidArgument("lag must be >= 1".into()));
    }
    if s.len() <= lag {
        return Err(Error::InsufficientData {
            needed: lag + 1,
            got: s.len(),
        });
    }
    Ok(s
        .quotes
        .iter()
        .zip(&s.quotes[lag..])
        .map(|(a, b)| (b.close as f64 / a.close as f64).ln())
        .collect())
}

/// Splits into (in, out, live). Out and live parts may be empty; the
/// in-sample may not.
pub fn split(s: &Series, sp: &SampleSplit) -> Result<(Series, Series, Series)> {
    sp.validate()?;
    let part = |r: &TimeRange| {
        s.with_quotes(
            s.quotes
                .iter()
                .filter(|q| r.contains(q.timestamp))
                .copied()
                .collect(),
        )
    };
    let in_part = part(&sp.in_range);
    if in_part.is_empty() {
        return Err(Error::EmptyInSample);
    }
    Ok((in_part, part(&sp.out_range), part(&sp.live_range)))
}
