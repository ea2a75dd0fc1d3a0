//! Shared inputs for the benchmarks.

use trendgate::{
    generate, GateSettings, GeneratorKind, GeneratorSpec, InstrumentSpec, Series, StrategyConfig, StrategyParams,
};

pub fn instrument() -> InstrumentSpec {
    InstrumentSpec::new("BENCH", 1e-6, 1).expect("valid instrument")
}

/// Trending walk of `n` five-minute bars.
pub fn trending_series(n: usize, seed: u64) -> Series {
    let spec = GeneratorSpec::new(GeneratorKind::Trending { drift: 2e-5, sigma: 1e-3 }, n, seed);
    generate(&spec, &instrument()).expect("valid generator")
}

pub fn gated_strategy() -> StrategyConfig {
    StrategyConfig::Gated {
        params: StrategyParams {
            tau1: 4.0,
            tau2: 16.0,
            tau3: 8.0,
            tau4: 32.0,
            vol_lo: 0.5,
            vol_hi: 400.0,
            profit_exit_bp: 2_000,
            loss_exit_bp: -2_000,
        },
        settings: GateSettings::default(),
    }
}
