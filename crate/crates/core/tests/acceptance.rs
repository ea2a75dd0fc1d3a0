//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use trendgate::engine::{run_with_execution, trades_csv, ExecutionModel};
use trendgate::indicators::{CrossingTracker, EmaState};
use trendgate::optimizer::{optimize_source, ParamRange, Validation};
use trendgate::quadrature::integrate;
use trendgate::qstats::unit_normalizer;
use trendgate::robustness::{run_battery, BatteryOptions, Component};
use trendgate::synthdata::series_from_increments;
use trendgate::*;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

// ---------------------------------------------------------------- 1

fn single_trade(spec: InstrumentSpec, prices: [&str; 3]) -> Result<Trade, String> {
    let closes: Vec<i64> = prices
        .iter()
        .map(|p| spec.price_to_ticks(p).ok_or(format!("unparseable {p}")))
        .collect::<Result<_, _>>()?;
    let s = Series::from_closes(spec, 0, 300, closes).map_err(|e| e.to_string())?;
    // enters long on the first rising bar, closed at the final bar
    let cfg = StrategyConfig::Baseline(BaselineParams {
        tau_bars: 1.0,
        phi: 1e-6,
        break_threshold: None,
    });
    let l = run_backtest(&s, &cfg, None, 0).map_err(|e| e.to_string())?;
    match l.trades.as_slice() {
        [t] => Ok(*t),
        other => Err(format!("expected one trade, got {other:?}")),
    }
}

fn c1_fees() -> Outcome {
    let ec = InstrumentSpec::new("EC", 0.0001, 1).map_err(|e| e.to_string())?;
    let t = single_trade(ec, ["1.3800", "1.3802", "1.3805"])?;
    let fdax = InstrumentSpec::new("FDAX", 1.0, 1)
        .and_then(|s| s.with_fee_multiplier(1))
        .map_err(|e| e.to_string())?;
    let f = single_trade(fdax, ["5890", "5900", "5910"])?;
    let got = (t.entry_price, t.exit_price, t.gross_bp, t.net_bp, f.entry_price, f.exit_price, f.gross_bp, f.net_bp);
    check(
        got == (13802, 13805, 3, 1, 5900, 5910, 10, 9),
        format!("EC gross {} net {}; FDAX gross {} net {}", t.gross_bp, t.net_bp, f.gross_bp, f.net_bp),
        format!("got {got:?}"),
    )
}

// ---------------------------------------------------------------- 2

fn closed_form_normalizer(q: f64) -> f64 {
    let sp = std::f64::consts::PI.sqrt();
    if q < 1.0 {
        let e = 1.0 - q;
        2.0 * sp * (ln_gamma(1.0 / e) - ln_gamma((3.0 - q) / (2.0 * e))).exp() / ((3.0 - q) * e.sqrt())
    } else if q > 1.0 {
        let e = q - 1.0;
        sp * (ln_gamma((3.0 - q) / (2.0 * e)) - ln_gamma(1.0 / e)).exp() / e.sqrt()
    } else {
        sp
    }
}

/// Integral of a density symmetric about `xbar` over the real line, piecewise on
/// dyadic intervals, plus the analytic power-law tail beyond `2^60`.
fn total_mass(m: &QGaussianModel) -> f64 {
    let w = m.support_half_width();
    let mut acc = 0.0;
    let (mut lo, mut hi) = (0.0, 0.25f64.min(w));
    while lo < w && hi <= 2f64.powi(60) {
        acc += integrate(|x| m.pdf(m.xbar + x), lo, hi, 1e-14);
        lo = hi;
        hi = (2.0 * hi).min(w);
    }
    if w.is_infinite() {
        // pdf ~ c x^(-2/(q-1)) far out
        let p = 2.0 / (m.q - 1.0);
        acc += m.pdf(m.xbar + lo) * lo / (p - 1.0);
    }
    2.0 * acc
}

fn c2_gaussian_limit() -> Outcome {
    let m = QGaussianModel::new(1.0 + 1e-9, 0.5, 0.0).map_err(|e| e.to_string())?;
    let mut worst_pdf = 0.0f64;
    for x in [0.0f64, 0.5, -1.0, 2.0, 3.5] {
        let normal = (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        worst_pdf = worst_pdf.max((qgauss_pdf(&m, x) - normal).abs());
    }
    let mut worst_norm = 0.0f64;
    let mut worst_z = 0.0f64;
    for q in [0.6, 1.0, 1.5, 2.0, 2.5] {
        let m = QGaussianModel::new(q, 2.0, 0.3).map_err(|e| e.to_string())?;
        worst_norm = worst_norm.max((total_mass(&m) - 1.0).abs());
        worst_z = worst_z.max((unit_normalizer(q) / closed_form_normalizer(q) - 1.0).abs());
    }
    let msg = format!("max |pdf - N(0,1)| {worst_pdf:.2e}; max |mass - 1| {worst_norm:.2e}; max Z_q rel err {worst_z:.2e}");
    check(worst_pdf < 1e-6 && worst_norm < 1e-6 && worst_z < 1e-6, msg.clone(), msg)
}

// ---------------------------------------------------------------- 3

fn c3_qfit() -> Outcome {
    let m = QGaussianModel::new(1.5, 1.0, 0.0).map_err(|e| e.to_string())?;
    let xs = qgauss_sample(&m, 100_000, 2024);
    let fit = qgauss_fit(&xs).map_err(|e| e.to_string())?;
    let q = fit.model.q;
    let msg = format!("q fitted {q:.4} (beta {:.4}, {} iterations)", fit.model.beta, fit.iterations);
    check((q - 1.5).abs() <= 0.05, msg.clone(), msg)
}

// ---------------------------------------------------------------- 4

fn fine_instrument() -> InstrumentSpec {
    InstrumentSpec::new("SYN", 1e-9, 1).expect("valid instrument")
}

fn c4_scaling() -> Outcome {
    let spec = GeneratorSpec::new(GeneratorKind::GaussianWalk { sigma: 1e-3 }, 200_001, 404)
        .with_initial_ticks(1e12);
    let s = generate(&spec, &fine_instrument()).map_err(|e| e.to_string())?;
    let fit = scaling_check(&s, 1.0, &[1, 2, 4, 8, 16], 0).map_err(|e| e.to_string())?;
    let msg = format!(
        "exponent {:.4} +- {:.4} (predicted {:.1})",
        fit.exponent_fitted, fit.exponent_stderr, fit.exponent_predicted
    );
    check((fit.exponent_fitted + 1.0).abs() <= 0.1, msg.clone(), msg)
}

// ---------------------------------------------------------------- 5

fn c5_crossing_density() -> Outcome {
    let results: Vec<(f64, Result<f64, String>)> = [0.3, 0.5, 0.7]
        .par_iter()
        .map(|&h| {
            let spec = GeneratorSpec::new(GeneratorKind::FbmLike { hurst: h, sigma: 1e-5 }, 1_000_000, 55)
                .with_initial_ticks(1e12);
            let r = generate(&spec, &fine_instrument())
                .and_then(|s| crossing_density(&s, 60, 100))
                .map(|e| e.slope)
                .map_err(|e| e.to_string());
            (h, r)
        })
        .collect();
    let mut parts = Vec::new();
    let mut ok = true;
    for (h, r) in results {
        match r {
            Ok(slope) => {
                ok &= (slope - (h - 1.0)).abs() <= 0.1;
                parts.push(format!("H={h}: slope {slope:.3} (target {:.1})", h - 1.0));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("H={h}: {e}"));
            }
        }
    }
    check(ok, parts.join("; "), parts.join("; "))
}

// ---------------------------------------------------------------- 6

fn c6_hurst() -> Outcome {
    let gauss = GeneratorSpec::new(GeneratorKind::GaussianWalk { sigma: 1e-3 }, 100_001, 606)
        .with_initial_ticks(1e12);
    let fgn = GeneratorSpec::new(GeneratorKind::FbmLike { hurst: 0.7, sigma: 1e-3 }, 100_001, 607)
        .with_initial_ticks(1e12);
    let h = |spec: &GeneratorSpec| -> Result<f64, String> {
        let inc = trendgate::synthdata::generate_increments(spec).map_err(|e| e.to_string())?;
        Ok(hurst_rescaled_range(&inc).map_err(|e| e.to_string())?.h)
    };
    let (h5, h7) = (h(&gauss)?, h(&fgn)?);
    let msg = format!("iid H {h5:.3}; fGn(0.7) H {h7:.3}");
    check((h5 - 0.5).abs() <= 0.05 && (0.62..=0.78).contains(&h7), msg.clone(), msg)
}

// ---------------------------------------------------------------- 7

fn c7_baseline_shape() -> Outcome {
    let spec = GeneratorSpec::new(GeneratorKind::Trending { drift: 2e-5, sigma: 1e-3 }, 100_000, 77)
        .with_initial_ticks(20_000.0);
    let s = generate(&spec, &InstrumentSpec::new("EC", 1e-4, 1).unwrap()).map_err(|e| e.to_string())?;
    let cfg = StrategyConfig::Baseline(BaselineParams {
        tau_bars: 20.0,
        phi: 2e-3,
        break_threshold: None,
    });
    let l = run_backtest(&s, &cfg, None, 7).map_err(|e| e.to_string())?;
    let mut nets: Vec<i64> = l.trades.iter().map(|t| t.net_bp).collect();
    nets.sort_unstable();
    if nets.len() < 10 {
        return Err(format!("only {} trades", nets.len()));
    }
    let mean = nets.iter().sum::<i64>() as f64 / nets.len() as f64;
    let median = if nets.len() % 2 == 1 {
        nets[nets.len() / 2] as f64
    } else {
        (nets[nets.len() / 2 - 1] + nets[nets.len() / 2]) as f64 / 2.0
    };
    let gross: i64 = l.trades.iter().map(|t| t.gross_bp).sum();
    let msg = format!("{} trades, mean {mean:.1} bp > median {median:.1} bp, gross {gross} bp", nets.len());
    check(mean > median && gross > 0, msg.clone(), msg)
}

// ---------------------------------------------------------------- 8

#[derive(Debug, Clone)]
struct EngineCase {
    kind: GeneratorKind,
    n_bars: usize,
    seed: u64,
    slippage: u32,
    strategy: StrategyConfig,
    test_id: Option<usize>,
    cut_fraction: f64,
}

fn engine_case() -> impl Strategy<Value = EngineCase> {
    let kind = prop_oneof![
        (1e-4f64..3e-3).prop_map(|sigma| GeneratorKind::GaussianWalk { sigma }),
        (-1e-4f64..1e-4, 1e-4f64..2e-3).prop_map(|(drift, sigma)| GeneratorKind::Trending { drift, sigma }),
        (0.3f64..0.8, 1e-4f64..2e-3).prop_map(|(hurst, sigma)| GeneratorKind::FbmLike { hurst, sigma }),
    ];
    let gated = (
        (1.0f64..10.0, 1.5f64..4.0, 1.0f64..20.0, 1.5f64..4.0),
        (0.0f64..15.0, 1.0f64..100.0),
        (1i64..400, -400i64..-1),
    )
        .prop_map(|((t1, r1, t3, r3), (lo, width), (profit, loss))| {
            StrategyConfig::gated(StrategyParams {
                tau1: t1,
                tau2: t1 * r1,
                tau3: t3,
                tau4: t3 * r3,
                vol_lo: lo,
                vol_hi: lo + width,
                profit_exit_bp: profit,
                loss_exit_bp: loss,
            })
        });
    let baseline = (2.0f64..40.0, 1e-4f64..5e-3, prop::option::of(0.0f64..1.0)).prop_map(|(tau, phi, b)| {
        StrategyConfig::Baseline(BaselineParams {
            tau_bars: tau,
            phi,
            break_threshold: b.map(|f| f * phi),
        })
    });
    (
        kind,
        200usize..1500,
        any::<u64>(),
        1u32..4,
        prop_oneof![gated, baseline],
        prop::option::of(0usize..128),
        0.3f64..0.95,
    )
        .prop_map(|(kind, n_bars, seed, slippage, strategy, test_id, cut_fraction)| EngineCase {
            kind,
            n_bars,
            seed,
            slippage,
            strategy,
            test_id,
            cut_fraction,
        })
}

fn engine_properties(c: &EngineCase) -> Result<(), TestCaseError> {
    let inst = InstrumentSpec::new("P", 1e-4, c.slippage).unwrap();
    let spec = GeneratorSpec::new(c.kind, c.n_bars, c.seed).with_initial_ticks(20_000.0);
    let s = generate(&spec, &inst).unwrap();
    let test = c.test_id.map(|id| build_catalog()[id].clone());
    let full = match run_backtest(&s, &c.strategy, test.as_ref(), c.seed) {
        Ok(l) => l,
        Err(Error::WarmupTooLong { .. }) => return Ok(()),
        Err(e) => return Err(TestCaseError::fail(e.to_string())),
    };

    // accounting identity
    full.check_invariants().map_err(TestCaseError::fail)?;
    let last = full.equity.last().unwrap().cum_net_bp;
    prop_assert_eq!(last, full.trades.iter().map(|t| t.net_bp).sum::<i64>());

    // byte determinism
    let again = run_backtest(&s, &c.strategy, test.as_ref(), c.seed).unwrap();
    prop_assert_eq!(trades_csv(&full), trades_csv(&again));
    prop_assert_eq!(&full, &again);

    // no lookahead
    let cut = ((c.n_bars as f64 * c.cut_fraction) as usize).max(2);
    let prefix = s.prefix(cut);
    if let Ok(p) = run_backtest(&prefix, &c.strategy, test.as_ref(), c.seed) {
        let last_ts = prefix.quotes()[cut - 1].timestamp;
        let settled: Vec<Trade> = p
            .trades
            .iter()
            .copied()
            .filter(|t| t.exit_reason != ExitReason::EndOfData)
            .collect();
        let expected: Vec<Trade> = full.trades.iter().copied().filter(|t| t.exit_time <= last_ts).collect();
        prop_assert_eq!(settled, expected);
        prop_assert_eq!(&p.equity[..cut - 1], &full.equity[..cut - 1]);
    }

    // fee monotonicity: same trades, each net no larger
    let exec = test.as_ref().map(|t| t.execution(&inst)).unwrap_or_default();
    let base_mult = exec.fee_multiplier.unwrap_or(inst.fee_multiplier);
    let raised = ExecutionModel {
        fee_multiplier: Some(base_mult + 3),
        ..exec
    };
    let pricier = run_with_execution(&s, &c.strategy, raised, c.seed, "raised".into()).unwrap();
    let reference = run_with_execution(&s, &c.strategy, exec, c.seed, "ref".into()).unwrap();
    prop_assert_eq!(pricier.trades.len(), reference.trades.len());
    for (a, b) in pricier.trades.iter().zip(&reference.trades) {
        prop_assert_eq!((a.entry_time, a.exit_time), (b.entry_time, b.exit_time));
        prop_assert!(a.net_bp <= b.net_bp);
    }
    Ok(())
}

fn c8_engine_invariants() -> Outcome {
    const CASES: u32 = 160;
    let mut runner = TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        rng_algorithm: proptest::test_runner::RngAlgorithm::ChaCha,
        ..Config::default()
    });
    let result = runner.run(&engine_case(), |c| engine_properties(&c));
    match result {
        Ok(()) => Ok(format!(
            "{CASES} random configurations: prefix, accounting, fee monotonicity, determinism hold"
        )),
        Err(e) => Err(format!("{e}")),
    }
}

// ---------------------------------------------------------------- 9

fn c9_battery() -> Outcome {
    let catalog = build_catalog();
    let distinct: std::collections::HashSet<_> = catalog.iter().map(|t| t.components.clone()).collect();
    if catalog.len() != 128 || distinct.len() != 128 {
        return Err(format!("catalog {} tests, {} distinct", catalog.len(), distinct.len()));
    }
    let inst = InstrumentSpec::new("SYN", 1e-4, 1).unwrap();
    let spec = GeneratorSpec::new(GeneratorKind::Trending { drift: 1e-5, sigma: 5e-4 }, 100_000, 99)
        .with_initial_ticks(20_000.0);
    let s = generate(&spec, &inst).map_err(|e| e.to_string())?;
    let strategy = StrategyConfig::gated(StrategyParams {
        tau1: 6.0,
        tau2: 24.0,
        tau3: 12.0,
        tau4: 48.0,
        vol_lo: 1.0,
        vol_hi: 8.0,
        profit_exit_bp: 60,
        loss_exit_bp: -40,
    });
    let report = run_battery(&s, &strategy, 9, BatteryOptions::default()).map_err(|e| e.to_string())?;
    let errors: Vec<usize> = report.entries.iter().filter(|e| e.error.is_some()).map(|e| e.id).collect();
    if !errors.is_empty() || !report.invariant_failures.is_empty() {
        return Err(format!("errors {errors:?}, invariant failures {:?}", report.invariant_failures));
    }
    // cost-only components versus the same test without them
    let violations: Vec<usize> = catalog
        .par_iter()
        .filter(|t| t.components.iter().any(|c| c.is_cost_only()))
        .filter_map(|t| {
            let with = run_backtest(&s, &strategy, Some(t), 9).ok()?;
            let stripped = t.without_costs();
            let without = if stripped.components.is_empty() {
                run_backtest(&s, &strategy, None, 9).ok()?
            } else {
                run_backtest(&s, &strategy, Some(&stripped), 9).ok()?
            };
            let per_trade_ok = with.trades.len() == without.trades.len()
                && with.trades.iter().zip(&without.trades).all(|(a, b)| a.net_bp <= b.net_bp);
            (!per_trade_ok || with.total_net_bp() > without.total_net_bp()).then_some(t.id)
        })
        .collect();
    let fee8 = report
        .entries
        .iter()
        .find(|e| e.components == [Component::FeeMultiplier { multiplier: 8 }])
        .and_then(|e| e.run.as_ref())
        .map(|r| r.total_net_bp);
    let nominal = run_backtest(&s, &strategy, None, 9).map_err(|e| e.to_string())?.total_net_bp();
    let trades: usize = report.entries.iter().filter_map(|e| e.run.as_ref()).map(|r| r.n_trades).sum();
    let msg = format!(
        "128 distinct tests, {trades} trades, all ledgers valid; cost monotonicity violations {violations:?}; \
         sharpe mean {:.2} rms {:.2}; fee x8 {:?} vs nominal {nominal}",
        report.spread.mean.unwrap_or(f64::NAN),
        report.spread.rms.unwrap_or(f64::NAN),
        fee8
    );
    check(violations.is_empty() && fee8.is_some_and(|f| f < nominal), msg.clone(), msg)
}

// ---------------------------------------------------------------- 10

struct LoggingSource {
    inner: SplitSource,
    log: Mutex<Vec<Segment>>,
    deny_beyond_in: bool,
}

impl DataSource for LoggingSource {
    fn fetch(&self, segment: Segment) -> trendgate::Result<Series> {
        self.log.lock().unwrap().push(segment);
        if self.deny_beyond_in && segment != Segment::In {
            return Err(Error::ProtocolViolation(format!("{segment:?} read during optimization")));
        }
        self.inner.fetch(segment)
    }
}

fn c10_isolation() -> Outcome {
    let inst = InstrumentSpec::new("SYN", 1e-4, 1).unwrap();
    let s = generate(
        &GeneratorSpec::new(GeneratorKind::Trending { drift: 2e-5, sigma: 5e-4 }, 6000, 10)
            .with_initial_ticks(20_000.0),
        &inst,
    )
    .map_err(|e| e.to_string())?;
    let t = |k: usize| s.quotes()[k].timestamp;
    let split = SampleSplit {
        in_range: TimeRange::new(t(0), t(3000)),
        out_range: TimeRange::new(t(3000), t(4500)),
        live_range: TimeRange::new(t(4500), t(5999) + 1),
    };
    let space = SearchSpace {
        tau1: ParamRange::new(2.0, 8.0, 2.0),
        tau2: ParamRange::new(12.0, 36.0, 12.0),
        tau3: ParamRange::fixed(8.0),
        tau4: ParamRange::fixed(32.0),
        vol_lo: ParamRange::fixed(0.5),
        vol_hi: ParamRange::fixed(50.0),
        profit_exit_bp: ParamRange::fixed(200.0),
        loss_exit_bp: ParamRange::fixed(-100.0),
        settings: GateSettings::default(),
    };
    let source = LoggingSource {
        inner: SplitSource::new(&s, &split).map_err(|e| e.to_string())?,
        log: Mutex::new(Vec::new()),
        deny_beyond_in: true,
    };
    let best = optimize_source(&source, &space, 8, 1).map_err(|e| e.to_string())?;
    let optimize_log = source.log.lock().unwrap().clone();

    let gate_source = LoggingSource {
        inner: SplitSource::new(&s, &split).map_err(|e| e.to_string())?,
        log: Mutex::new(Vec::new()),
        deny_beyond_in: false,
    };
    let mut v = Validation::new(best.best_params, space.settings, &gate_source, Thresholds::default(), 1)
        .map_err(|e| e.to_string())?;
    let early = v.evaluate_live();
    let log_before_gate = gate_source.log.lock().unwrap().clone();

    // impossible out-sample threshold: live must stay unread
    let strict = Thresholds {
        min_out_sharpe: f64::INFINITY,
        ..Thresholds::default()
    };
    let mut rejected = Validation::new(best.best_params, space.settings, &gate_source, strict, 1)
        .map_err(|e| e.to_string())?;
    let decision = rejected.run_gate().map_err(|e| e.to_string())?;
    let after_reject = rejected.evaluate_live();
    let report = rejected.report().map_err(|e| e.to_string())?;
    let live_reads = gate_source.log.lock().unwrap().iter().filter(|s| **s == Segment::Live).count();

    let ok = optimize_log == [Segment::In]
        && matches!(early, Err(Error::ProtocolViolation(_)))
        && log_before_gate.is_empty()
        && decision != GateDecision::Accepted
        && matches!(after_reject, Err(Error::ProtocolViolation(_)))
        && report.live_sharpe.is_none()
        && live_reads == 0;
    let msg = format!(
        "optimize read {optimize_log:?}; live before gate -> {}; after {decision:?} -> {}; live reads {live_reads}",
        early.map_or_else(|e| e.to_string(), |_| "allowed".into()),
        after_reject.map_or_else(|e| e.to_string(), |_| "allowed".into()),
    );
    check(ok, msg.clone(), msg)
}

// ---------------------------------------------------------------- 11

fn c11_randomization() -> Outcome {
    const N: usize = 1_000_000;
    let slippage = 2;
    let inst = InstrumentSpec::new("R", 1e-4, slippage).unwrap();
    let s = Series::from_closes(inst, 0, 60, vec![1_000_000; N]).map_err(|e| e.to_string())?;
    let r = randomize_series(&s, 1111).map_err(|e| e.to_string())?;
    let mut counts: BTreeMap<i64, u64> = BTreeMap::new();
    for (a, b) in s.quotes().iter().zip(r.quotes()) {
        if a.timestamp != b.timestamp {
            return Err("timestamps changed".into());
        }
        *counts.entry(b.close - a.close).or_default() += 1;
    }
    let support: Vec<i64> = (-10..=10).map(|k| k * i64::from(slippage)).collect();
    if counts.keys().copied().collect::<Vec<_>>() != support {
        return Err(format!("offset support {:?}", counts.keys().collect::<Vec<_>>()));
    }
    let expected = N as f64 / 21.0;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(20.0).unwrap().cdf(chi2);
    let msg = format!("chi2 {chi2:.2} on 20 dof, p = {p:.3}");
    check(p > 0.001, msg.clone(), msg)
}

// ---------------------------------------------------------------- 12

fn c12_homotopy() -> Outcome {
    // Noise-free trend legs whose log price is linear across each pair of
    // five-minute bars, so the ten-minute resampling loses nothing.
    let mut r = trendgate::rng::substream(12, "homotopy", 0);
    let mut inc = Vec::new();
    let mut sign = 1.0;
    while inc.len() < 20_000 {
        let pairs = rand::Rng::random_range(&mut r, 30..120);
        let drift = sign * rand::Rng::random_range(&mut r, 1e-4..4e-4);
        inc.extend(std::iter::repeat_n(drift, 2 * pairs));
        sign = -sign;
    }
    // index 0 then pairs (1,2), (3,4), ... share a drift
    inc.insert(0, 1e-4);
    let inst = InstrumentSpec::new("H", 1e-12, 1).unwrap();
    let fine = series_from_increments(&inst, 1e15, 0, 300, &inc).map_err(|e| e.to_string())?;
    let coarse = resample(&fine, 2).map_err(|e| e.to_string())?;
    // coarse quotes sit at fine indices 1, 3, 5, ...
    let fine_rets = log_returns(&fine, 1).map_err(|e| e.to_string())?;
    let coarse_rets = log_returns(&coarse, 1).map_err(|e| e.to_string())?;

    let (tau_fast, tau_slow) = (12.0, 48.0);
    type EmaRun = (Vec<[f64; 2]>, Vec<(usize, Direction)>);
    let run = |rets: &[f64], scale: f64| -> Result<EmaRun, String> {
        let mut a = EmaState::new(tau_fast / scale).map_err(|e| e.to_string())?;
        let mut b = EmaState::new(tau_slow / scale).map_err(|e| e.to_string())?;
        let mut tracker = CrossingTracker::default();
        let mut path = Vec::with_capacity(rets.len());
        let mut crossings = Vec::new();
        for (k, &x) in rets.iter().enumerate() {
            a = a.step_bar(x);
            b = b.step_bar(x);
            path.push([a.value, b.value]);
            if let Some(d) = tracker.update(b.value - a.value) {
                crossings.push((k, d));
            }
        }
        Ok((path, crossings))
    };
    // fine returns from index 1 onward start at the first shared timestamp
    let (fine_path, fine_cross) = run(&fine_rets[1..], 1.0)?;
    let (coarse_path, coarse_cross) = run(&coarse_rets, 2.0)?;

    let mut worst = 0.0f64;
    for (j, c) in coarse_path.iter().enumerate() {
        let f = fine_path[2 * j + 1];
        for i in 0..2 {
            worst = worst.max((f[i] - c[i]).abs() / c[i].abs().max(1e-300));
        }
    }
    // fine crossing at step k lands on coarse step ceil((k - 1) / 2)
    let mapped: Vec<(usize, Direction)> = fine_cross.iter().map(|&(k, d)| (k / 2, d)).collect();
    let same_sequence = mapped == coarse_cross;
    let msg = format!(
        "{} shared timestamps, max relative EMA gap {worst:.2e}, {} crossings at each resolution, identical: {same_sequence}",
        coarse_path.len(),
        coarse_cross.len()
    );
    check(worst <= 1e-6 && same_sequence && !coarse_cross.is_empty(), msg.clone(), msg)
}

// ----------------------------------------------------------------

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: Vec<Criterion> = vec![
        ("fee arithmetic", c1_fees),
        ("q-Gaussian limit and normalization", c2_gaussian_limit),
        ("q-fit round trip", c3_qfit),
        ("superdiffusive scaling exponent", c4_scaling),
        ("crossing-density slope", c5_crossing_density),
        ("rescaled-range Hurst", c6_hurst),
        ("baseline trend-follower shape", c7_baseline_shape),
        ("engine invariants", c8_engine_invariants),
        ("stress battery", c9_battery),
        ("protocol isolation", c10_isolation),
        ("randomization uniformity", c11_randomization),
        ("5 to 10 minute homotopy", c12_homotopy),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS criterion {:>2} {name}: {msg} [{secs:.1}s]", i + 1),
            Err(msg) => {
                failures += 1;
                println!("FAIL criterion {:>2} {name}: {msg} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
