//! Non-extensive (q-Gaussian) return statistics: density, maximum
//! likelihood fit, generalised Box-Muller sampling and the diffusion
//! scaling check of the scale parameter across time lags.
//!
//! The density is
//!
//! ```text
//! P(x) = {1 - beta (1 - q) (x - xbar)^2}_+^(1 / (1 - q)) / Z_q
//! ```
//!
//! which tends to a Gaussian with variance `1 / (2 beta)` as `q -> 1`,
//! has compact support for `q < 1` and power-law tails for `1 < q < 3`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::integrate;
use crate::rng;
use crate::series::{log_returns, Series};
use crate::simplex::{self, SimplexOptions};
use crate::stats::linear_fit;

/// Bounds on `q` explored by the fitter.
pub const FIT_Q_BOUNDS: (f64, f64) = (0.5, 2.9);
pub const MIN_FIT_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QGaussianModel {
    pub q: f64,
    pub beta: f64,
    pub xbar: f64,
    pub z_q: f64,
}

impl QGaussianModel {
    /// Builds a model and computes its normaliser by adaptive quadrature.
    pub fn new(q: f64, beta: f64, xbar: f64) -> Result<Self> {
        if !(q.is_finite() && q < 3.0) {
            return Err(Error::InvalidModel(format!("q must be < 3, got {q}")));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidModel(format!("beta must be > 0, got {beta}")));
        }
        if !xbar.is_finite() {
            return Err(Error::InvalidModel("xbar must be finite".into()));
        }
        let z_q = unit_normalizer(q) / beta.sqrt();
        Ok(Self { q, beta, xbar, z_q })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let u = x - self.xbar;
        q_bracket(self.q, self.beta * u * u) / self.z_q
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let u = x - self.xbar;
        ln_q_bracket(self.q, self.beta * u * u) - self.z_q.ln()
    }

    /// Support half-width around `xbar`; infinite for `q >= 1`.
    pub fn support_half_width(&self) -> f64 {
        if self.q < 1.0 {
            1.0 / (self.beta * (1.0 - self.q)).sqrt()
        } else {
            f64::INFINITY
        }
    }

    /// Variance when it exists (`q < 5/3`).
    pub fn variance(&self) -> Option<f64> {
        (self.q < 5.0 / 3.0).then(|| 1.0 / (self.beta * (5.0 - 3.0 * self.q)))
    }

    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        samples.iter().map(|&x| self.ln_pdf(x)).sum()
    }
}

/// Free-function form of [`QGaussianModel::pdf`].
pub fn qgauss_pdf(m: &QGaussianModel, x: f64) -> f64 {
    m.pdf(x)
}

/// `{1 - (1 - q) t}_+^(1/(1-q))` for `t = beta u^2 >= 0`.
fn q_bracket(q: f64, t: f64) -> f64 {
    let v = ln_q_bracket(q, t);
    if v == f64::NEG_INFINITY {
        0.0
    } else {
        v.exp()
    }
}

fn ln_q_bracket(q: f64, t: f64) -> f64 {
    if q == 1.0 {
        return -t;
    }
    let a = (1.0 - q) * t;
    if a >= 1.0 {
        return f64::NEG_INFINITY;
    }
    (-a).ln_1p() / (1.0 - q)
}

/// `Z_q` at `beta = 1`: integral of the bracket over the real line.
pub fn unit_normalizer(q: f64) -> f64 {
    const TOL: f64 = 1e-14;
    let f = |v: f64| q_bracket(q, v * v);
    let half = if q == 1.0 {
        return std::f64::consts::PI.sqrt();
    } else if q < 1.0 {
        let edge = 1.0 / (1.0 - q).sqrt();
        let mut total = 0.0;
        let mut lo = 0.0;
        let mut hi = edge.min(1.0);
        loop {
            total += integrate(f, lo, hi, TOL);
            if hi >= edge {
                break total;
            }
            lo = hi;
            hi = (2.0 * hi).min(edge);
        }
    } else {
        // core on [0, 1]; tail via v = u^-k on u in (0, 1], with k large
        // enough that the transformed integrand stays bounded at u = 0
        let tail_power = 2.0 / (q - 1.0);
        let k = ((q - 1.0) / (3.0 - q)).ceil().max(1.0) + 1.0;
        // evaluated in logs: v overflows long before the tail mass is spent
        let g = |u: f64| {
            let ln_v = -k * u.ln();
            let w = (q - 1.0).ln() + 2.0 * ln_v;
            let ln_base = if w > 30.0 { w + (-w).exp() } else { w.exp().ln_1p() };
            (-ln_base / (q - 1.0) + k.ln() + ln_v - u.ln()).exp()
        };
        debug_assert!(k * (tail_power - 1.0) - 1.0 >= 0.0);
        let mut total = integrate(f, 0.0, 1.0, TOL);
        let mut hi = 1.0;
        for _ in 0..60 {
            let lo = 0.5 * hi;
            total += integrate(g, lo, hi, TOL);
            hi = lo;
        }
        total
    };
    2.0 * half
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QGaussianFit {
    pub model: QGaussianModel,
    pub log_likelihood: f64,
    pub iterations: usize,
}

struct Standardized {
    values: Vec<f64>,
    center: f64,
    scale: f64,
}

fn standardize(samples: &[f64]) -> Result<Standardized> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_FIT_SAMPLES,
            got: samples.len(),
        });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let center = sorted[sorted.len() / 2];
    let mut dev: Vec<f64> = sorted.iter().map(|x| (x - center).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mut scale = 1.482_6 * dev[dev.len() / 2];
    if scale == 0.0 {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        scale = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    }
    if scale == 0.0 {
        return Err(Error::Degenerate("all samples identical".into()));
    }
    Ok(Standardized {
        values: samples.iter().map(|x| (x - center) / scale).collect(),
        center,
        scale,
    })
}

fn mean_log_likelihood(y: &[f64], q: f64, beta: f64, xbar: f64) -> f64 {
    let ln_z = (unit_normalizer(q) / beta.sqrt()).ln();
    let mut total = 0.0;
    for &x in y {
        let u = x - xbar;
        let v = ln_q_bracket(q, beta * u * u);
        if v == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        total += v;
    }
    total / y.len() as f64 - ln_z
}

fn finish_fit(
    std: &Standardized,
    q: f64,
    beta_std: f64,
    xbar_std: f64,
    mean_ll: f64,
    iterations: usize,
    converged: bool,
) -> Result<QGaussianFit> {
    let n = std.values.len() as f64;
    let model = QGaussianModel::new(
        q,
        beta_std / (std.scale * std.scale),
        std.center + std.scale * xbar_std,
    )?;
    let log_likelihood = n * (mean_ll - std.scale.ln());
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            best_log_likelihood: log_likelihood,
            best: Box::new(model),
        });
    }
    Ok(QGaussianFit {
        model,
        log_likelihood,
        iterations,
    })
}

/// Runs the simplex twice (the second pass restarts from the first
/// optimum) within one shared iteration budget.
fn minimize_with_restart(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    steps: &[f64],
    bounds: &[(f64, f64)],
) -> simplex::SimplexResult {
    let opts = SimplexOptions::default();
    let first = simplex::minimize(&f, x0, steps, bounds, opts);
    let remaining = opts.max_iterations.saturating_sub(first.iterations);
    let restart_steps: Vec<f64> = steps.iter().map(|s| 0.1 * s).collect();
    let second = simplex::minimize(
        &f,
        &first.x,
        &restart_steps,
        bounds,
        SimplexOptions {
            max_iterations: remaining,
            ..opts
        },
    );
    let mut best = if second.fx <= first.fx { second } else { first.clone() };
    best.iterations = first.iterations + best.iterations.min(remaining);
    best.converged = best.converged && first.converged;
    best
}

/// Maximum-likelihood fit of `(q, beta, xbar)` with `q` bounded to
/// [`FIT_Q_BOUNDS`].
pub fn qgauss_fit(samples: &[f64]) -> Result<QGaussianFit> {
    let std = standardize(samples)?;
    let y = &std.values;
    let objective = |p: &[f64]| -mean_log_likelihood(y, p[0], p[1].exp(), p[2]);
    let r = minimize_with_restart(
        objective,
        &[1.2, (0.5f64).ln(), 0.0],
        &[0.2, 0.5, 0.1],
        &[FIT_Q_BOUNDS, (-20.0, 20.0), (-10.0, 10.0)],
    );
    finish_fit(&std, r.x[0], r.x[1].exp(), r.x[2], -r.fx, r.iterations, r.converged)
}

/// Maximum-likelihood fit of `(beta, xbar)` with `q` held fixed.
pub fn qgauss_fit_fixed_q(samples: &[f64], q: f64) -> Result<QGaussianFit> {
    if !(q.is_finite() && q < 3.0) {
        return Err(Error::InvalidModel(format!("q must be < 3, got {q}")));
    }
    let std = standardize(samples)?;
    let y = &std.values;
    let objective = |p: &[f64]| -mean_log_likelihood(y, q, p[0].exp(), p[1]);
    let r = minimize_with_restart(
        objective,
        &[(0.5f64).ln(), 0.0],
        &[0.5, 0.1],
        &[(-20.0, 20.0), (-10.0, 10.0)],
    );
    finish_fit(&std, q, r.x[0].exp(), r.x[1], -r.fx, r.iterations, r.converged)
}

/// `ln_q(x) = (x^(1-q) - 1) / (1 - q)`.
fn ln_q(x: f64, q: f64) -> f64 {
    if q == 1.0 {
        x.ln()
    } else {
        let e = 1.0 - q;
        (e * x.ln()).exp_m1() / e
    }
}

/// Draws `n` deviates with the generalised Box-Muller transform.
///
/// With `q' = (1 + q) / (3 - q)`, `sqrt(-2 ln_q'(U1)) cos(2 pi U2)` is a
/// q-Gaussian with `beta = 1 / (3 - q)`; the result is rescaled to the
/// model's `beta` and shifted to `xbar`.
pub fn qgauss_sample(m: &QGaussianModel, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::substream(seed, "qgauss_sample", 0);
    sample_with(m, n, &mut rng)
}

pub(crate) fn sample_with(m: &QGaussianModel, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let q_prime = (1.0 + m.q) / (3.0 - m.q);
    let scale = (1.0 / ((3.0 - m.q) * m.beta)).sqrt();
    (0..n)
        .map(|_| {
            let u1 = 1.0 - rng.random::<f64>();
            let u2 = rng.random::<f64>();
            let radius = (-2.0 * ln_q(u1, q_prime)).max(0.0).sqrt();
            m.xbar + scale * radius * (std::f64::consts::TAU * u2).cos()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagBeta {
    pub lag: usize,
    pub beta: f64,
    pub xbar: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub q_used: f64,
    pub tau0: usize,
    /// Slope of `ln beta(tau)/beta(tau0)` against `ln(tau - tau0)`.
    pub exponent_fitted: f64,
    pub exponent_stderr: f64,
    /// `-2 / (3 - q)`.
    pub exponent_predicted: f64,
    /// Slope against `ln(tau / tau0)`; absent when `tau0 = 0`.
    pub ratio_exponent_fitted: Option<f64>,
    /// `beta(tau0)`, absent when `tau0 = 0` (the slope does not depend on
    /// the reference level).
    pub beta_ref: Option<f64>,
    /// Lags above `tau0`, the ones entering both regressions.
    pub regression_lags: Vec<usize>,
    /// Every requested lag, including those at or below `tau0`.
    pub per_lag: Vec<LagBeta>,
}

/// Fits `beta(tau)` at every lag (with `q` fixed at `q`) and regresses
/// `ln beta(tau)/beta(tau0)` on `ln(tau - tau0)`.
pub fn scaling_check(s: &Series, q: f64, lags: &[usize], tau0: usize) -> Result<ScalingFit> {
    if !(q.is_finite() && q < 3.0) {
        return Err(Error::InvalidModel(format!("q must be < 3, got {q}")));
    }
    if let Some(&bad) = lags.iter().find(|&&l| l == 0) {
        return Err(Error::InvalidArgument(format!("lag {bad} must be positive")));
    }
    if lags.iter().filter(|&&l| l > tau0).count() < 2 {
        return Err(Error::InvalidArgument(format!(
            "scaling regression needs at least 2 lags above tau0 = {tau0}"
        )));
    }
    let fit_lag = |lag: usize| -> Result<LagBeta> {
        let wrap = |e: Error| Error::LagFit {
            lag,
            source: Box::new(e),
        };
        let returns = log_returns(s, lag).map_err(wrap)?;
        let fit = qgauss_fit_fixed_q(&returns, q).map_err(wrap)?;
        Ok(LagBeta {
            lag,
            beta: fit.model.beta,
            xbar: fit.model.xbar,
            samples: returns.len(),
        })
    };
    let per_lag: Vec<LagBeta> = lags
        .par_iter()
        .map(|&lag| fit_lag(lag))
        .collect::<Result<_>>()?;
    let beta_ref = match (tau0, per_lag.iter().find(|b| b.lag == tau0)) {
        (0, _) => None,
        (_, Some(b)) => Some(b.beta),
        (_, None) => Some(fit_lag(tau0)?.beta),
    };
    let ref_ln = beta_ref.map_or(0.0, f64::ln);
    let used: Vec<&LagBeta> = per_lag.iter().filter(|b| b.lag > tau0).collect();
    let ys: Vec<f64> = used.iter().map(|b| b.beta.ln() - ref_ln).collect();
    let xs: Vec<f64> = used
        .iter()
        .map(|b| ((b.lag - tau0) as f64).ln())
        .collect();
    let fit = linear_fit(&xs, &ys)
        .ok_or_else(|| Error::Degenerate("scaling regression needs distinct lags".into()))?;
    let ratio_exponent_fitted = (tau0 >= 1)
        .then(|| {
            let xr: Vec<f64> = used
                .iter()
                .map(|b| (b.lag as f64 / tau0 as f64).ln())
                .collect();
            linear_fit(&xr, &ys).map(|f| f.slope)
        })
        .flatten();
    let regression_lags = used.iter().map(|b| b.lag).collect();
    Ok(ScalingFit {
        q_used: q,
        tau0,
        exponent_fitted: fit.slope,
        exponent_stderr: fit.slope_stderr,
        exponent_predicted: -2.0 / (3.0 - q),
        ratio_exponent_fitted,
        beta_ref,
        regression_lags,
        per_lag,
    })
}
