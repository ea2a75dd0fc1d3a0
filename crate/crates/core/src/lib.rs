//! Volatility-gated EMA trend following: data handling, indicators,
//! q-Gaussian statistics, a deterministic backtester, stress batteries,
//! parameter search with sample isolation, and synthetic data.

pub mod engine;
pub mod error;
pub mod indicators;
pub mod optimizer;
pub mod provenance;
pub mod qstats;
pub mod quadrature;
pub mod rng;
pub mod robustness;
pub mod series;
pub mod simplex;
pub mod stats;
pub mod strategy;
pub mod synthdata;

pub use engine::{
    compute_metrics, export_report, run_backtest, EquityPoint, ExitReason, Ledger, Metrics, Side, Trade,
};
pub use error::{Error, Result};
pub use indicators::{
    crossing_density, detect_crossings, ema_path, ema_step, hurst_rescaled_range, rolling_volatility,
    CrossingDensityEstimate, Direction, EmaState, HurstEstimate,
};
pub use optimizer::{
    optimize, validate, DataSource, GateDecision, SearchSpace, Segment, SplitSource, Thresholds, ValidationReport,
};
pub use qstats::{qgauss_fit, qgauss_pdf, qgauss_sample, scaling_check, QGaussianFit, QGaussianModel, ScalingFit};
pub use robustness::{build_catalog, randomize_series, run_battery, SharpeSpread, StressTest};
pub use series::{load_csv, log_returns, resample, split, InstrumentSpec, Quote, SampleSplit, Series, TimeRange};
pub use strategy::{BaselineParams, GateSettings, StrategyConfig, StrategyParams};
pub use synthdata::{generate, GeneratorKind, GeneratorSpec};
