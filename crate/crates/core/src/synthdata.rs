//! Seeded synthetic log-price walks.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qstats::{sample_with, QGaussianModel};
use crate::rng::{self, StreamRng};
use crate::series::{InstrumentSpec, Quote, Series};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    GaussianWalk { sigma: f64 },
    QgaussianWalk { q: f64, beta: f64 },
    FbmLike { hurst: f64, sigma: f64 },
    Trending { drift: f64, sigma: f64 },
}

fn default_initial_ticks() -> f64 {
    1_000_000.0
}

fn default_bar_seconds() -> i64 {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    pub n_bars: usize,
    pub seed: u64,
    /// First close, in ticks.
    #[serde(default = "default_initial_ticks")]
    pub initial_ticks: f64,
    #[serde(default)]
    pub start_timestamp: i64,
    #[serde(default = "default_bar_seconds")]
    pub bar_seconds: i64,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, n_bars: usize, seed: u64) -> Self {
        Self {
            kind,
            n_bars,
            seed,
            initial_ticks: default_initial_ticks(),
            start_timestamp: 0,
            bar_seconds: default_bar_seconds(),
        }
    }

    pub fn with_initial_ticks(mut self, initial_ticks: f64) -> Self {
        self.initial_ticks = initial_ticks;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_bars < 1 {
            return bad("n_bars must be at least 1");
        }
        if !(self.initial_ticks.is_finite() && self.initial_ticks >= 1.0) {
            return bad("initial_ticks must be at least one tick");
        }
        if self.bar_seconds <= 0 {
            return bad("bar_seconds must be positive");
        }
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        match self.kind {
            GeneratorKind::GaussianWalk { sigma } if !nonneg(sigma) => bad("sigma must be >= 0"),
            GeneratorKind::Trending { drift, sigma } if !(nonneg(sigma) && drift.is_finite()) => {
                bad("need finite drift and sigma >= 0")
            }
            GeneratorKind::FbmLike { hurst, sigma } if !(hurst > 0.0 && hurst < 1.0 && nonneg(sigma)) => {
                bad("need 0 < hurst < 1 and sigma >= 0")
            }
            GeneratorKind::QgaussianWalk { q, beta } => QGaussianModel::new(q, beta, 0.0).map(|_| ()),
            _ => Ok(()),
        }
    }
}

fn normals(r: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect()
}

/// fGn autocovariance at lag `k` for unit variance.
pub fn fgn_autocovariance(hurst: f64, k: usize) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

/// Exact fGn by Durbin-Levinson recursion. Quadratic cost.
pub fn fgn_hosking(hurst: f64, n: usize, rng: &mut StreamRng) -> Vec<f64> {
    let gamma: Vec<f64> = (0..n.max(1)).map(|k| fgn_autocovariance(hurst, k)).collect();
    let z = normals(rng, n);
    let mut out = Vec::with_capacity(n);
    let mut phi: Vec<f64> = Vec::with_capacity(n);
    let mut v = gamma[0];
    for t in 0..n {
        if t > 0 {
            // extend the order-(t-1) predictor to order t
            let num = gamma[t] - (0..t - 1).map(|j| phi[j] * gamma[t - 1 - j]).sum::<f64>();
            let k = num / v;
            let prev = phi.clone();
            for j in 0..t - 1 {
                phi[j] = prev[j] - k * prev[t - 2 - j];
            }
            phi.push(k);
            v *= 1.0 - k * k;
        }
        let mean: f64 = (0..t).map(|j| phi[j] * out[t - 1 - j]).sum();
        out.push(mean + v.max(0.0).sqrt() * z[t]);
    }
    out
}

/// fGn by circulant embedding, or `None` when the embedding is not
/// non-negative definite.
pub fn fgn_circulant(hurst: f64, n: usize, rng: &mut StreamRng) -> Option<Vec<f64>> {
    let m = (2 * n.max(2)).next_power_of_two();
    let half = m / 2;
    let mut row: Vec<Complex64> = (0..m)
        .map(|k| {
            let lag = if k <= half { k } else { m - k };
            Complex64::new(fgn_autocovariance(hurst, lag), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut row);
    let scale = row.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
    if row.iter().any(|c| c.re < -1e-10 * scale) {
        return None;
    }
    let mut w: Vec<Complex64> = row
        .iter()
        .map(|lambda| {
            let amp = (lambda.re.max(0.0) / m as f64).sqrt();
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            Complex64::new(amp * a, amp * b)
        })
        .collect();
    fft.process(&mut w);
    Some(w.into_iter().take(n).map(|c| c.re).collect())
}

const HOSKING_MAX: usize = 64;

fn fgn(hurst: f64, n: usize, rng: &mut StreamRng) -> Vec<f64> {
    if n <= HOSKING_MAX {
        return fgn_hosking(hurst, n, rng);
    }
    match fgn_circulant(hurst, n, rng) {
        Some(v) => v,
        None => fgn_hosking(hurst, n, rng),
    }
}

/// The `n_bars - 1` log returns of the walk.
pub fn generate_increments(spec: &GeneratorSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = spec.n_bars - 1;
    let mut r = rng::substream(spec.seed, "synthdata", 0);
    Ok(match spec.kind {
        GeneratorKind::GaussianWalk { sigma } => normals(&mut r, n).into_iter().map(|z| sigma * z).collect(),
        GeneratorKind::Trending { drift, sigma } => {
            normals(&mut r, n).into_iter().map(|z| drift + sigma * z).collect()
        }
        GeneratorKind::QgaussianWalk { q, beta } => sample_with(&QGaussianModel::new(q, beta, 0.0)?, n, &mut r),
        GeneratorKind::FbmLike { hurst, sigma } => {
            fgn(hurst, n, &mut r).into_iter().map(|x| sigma * x).collect()
        }
    })
}

/// Builds a series from log returns: `close_k = round(initial * exp(sum))`,
/// kept at one tick or more.
pub fn series_from_increments(
    instrument: &InstrumentSpec,
    initial_ticks: f64,
    start_timestamp: i64,
    bar_seconds: i64,
    increments: &[f64],
) -> Result<Series> {
    let mut log_price = 0.0;
    let mut quotes = Vec::with_capacity(increments.len() + 1);
    let close = |lp: f64| ((initial_ticks * lp.exp()).round() as i64).max(1);
    quotes.push(Quote {
        timestamp: start_timestamp,
        close: close(0.0),
    });
    for (k, x) in increments.iter().enumerate() {
        log_price += x;
        quotes.push(Quote {
            timestamp: start_timestamp + (k as i64 + 1) * bar_seconds,
            close: close(log_price),
        });
    }
    Series::new(instrument.clone(), quotes, bar_seconds)
}

pub fn generate(spec: &GeneratorSpec, instrument: &InstrumentSpec) -> Result<Series> {
    instrument.validate()?;
    let inc = generate_increments(spec)?;
    series_from_increments(instrument, spec.initial_ticks, spec.start_timestamp, spec.bar_seconds, &inc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst() -> InstrumentSpec {
        InstrumentSpec::new("SYN", 1e-6, 1).unwrap()
    }

    #[test]
    fn zero_sigma_is_constant() {
        let spec = GeneratorSpec::new(GeneratorKind::GaussianWalk { sigma: 0.0 }, 100, 3);
        let s = generate(&spec, &inst()).unwrap();
        assert_eq!(s.len(), 100);
        assert!(s.closes().all(|c| c == 1_000_000));
        let t = GeneratorSpec::new(GeneratorKind::Trending { drift: 0.0, sigma: 0.0 }, 10, 3);
        assert!(generate(&t, &inst()).unwrap().closes().all(|c| c == 1_000_000));
    }

    #[test]
    fn invalid_specs() {
        let bad = [
            GeneratorSpec::new(GeneratorKind::GaussianWalk { sigma: -1.0 }, 10, 0),
            GeneratorSpec::new(GeneratorKind::GaussianWalk { sigma: 1.0 }, 0, 0),
            GeneratorSpec::new(GeneratorKind::FbmLike { hurst: 1.0, sigma: 1.0 }, 10, 0),
            GeneratorSpec::new(GeneratorKind::QgaussianWalk { q: 3.0, beta: 1.0 }, 10, 0),
        ];
        for spec in bad {
            assert!(generate(&spec, &inst()).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn determinism_and_seed_sensitivity() {
        let spec = GeneratorSpec::new(GeneratorKind::FbmLike { hurst: 0.6, sigma: 1e-3 }, 500, 11);
        let a = generate(&spec, &inst()).unwrap();
        assert_eq!(a, generate(&spec, &inst()).unwrap());
        let other = GeneratorSpec { seed: 12, ..spec };
        assert_ne!(a, generate(&other, &inst()).unwrap());
    }

    #[test]
    fn autocovariance_values() {
        assert!((fgn_autocovariance(0.5, 1)).abs() < 1e-15);
        assert!((fgn_autocovariance(0.7, 0) - 1.0).abs() < 1e-15);
        assert!((fgn_autocovariance(0.7, 1) - (2f64.powf(0.4) - 1.0)).abs() < 1e-12);
    }

    /// Both synthesis methods reproduce the target covariance over many
    /// short paths.
    #[test]
    fn hosking_and_circulant_covariances() {
        let h = 0.75;
        let n = 8;
        let paths = 40_000;
        let mut r = rng::substream(5, "test", 0);
        let mut cov_h = [0.0; 3];
        let mut cov_c = [0.0; 3];
        for _ in 0..paths {
            let a = fgn_hosking(h, n, &mut r);
            let b = fgn_circulant(h, n, &mut r).unwrap();
            for lag in 0..3 {
                cov_h[lag] += a[2] * a[2 + lag];
                cov_c[lag] += b[2] * b[2 + lag];
            }
        }
        for lag in 0..3 {
            let want = fgn_autocovariance(h, lag);
            let tol = 0.03;
            assert!((cov_h[lag] / paths as f64 - want).abs() < tol, "hosking lag {lag}");
            assert!((cov_c[lag] / paths as f64 - want).abs() < tol, "circulant lag {lag}");
        }
    }
}
