//! Expanding backtest on a reduced synthetic pair: bookkeeping of origins,
//! horizons and residual sets, and independence from the execution mode.

use dxband::data::{synth_sex_pair, SynthSpec};
use dxband::evaluation::{expanding_backtest, BacktestConfig, SplitSpec};
use dxband::{Execution, LifeTableSeries, Method};

fn data() -> Vec<LifeTableSeries> {
    let (f, m) = synth_sex_pair(&SynthSpec::new(30, 41, 2, 0.01, 11)).unwrap();
    vec![f, m]
}

#[test]
fn phase_sizes_follow_the_split() {
    let d = data();
    let split = SplitSpec::thirds(d[0].years()).unwrap();
    assert_eq!(split.sizes(), (10, 10, 10));
    let r = expanding_backtest(&d, &split, &BacktestConfig::default()).unwrap();

    // 2 transforms x 3 models
    assert_eq!(r.cells.len(), 6);
    for c in &r.cells {
        assert_eq!(c.test_pairs, 55);
    }
    assert_eq!(r.report_horizons, 9);

    // One residual set per validation horizon. Origins run from the last
    // training year, so M = n_val - h + 1.
    assert_eq!(r.residuals.len(), 6 * 2);
    for v in &r.residuals {
        assert_eq!(v.sets.len(), split.calibration_horizons());
        for s in &v.sets {
            assert_eq!(s.m(), 11 - s.horizon());
            assert_eq!(s.n_ages(), 41);
        }
    }

    // cells x sexes x methods x alphas
    assert_eq!(r.results.len(), 6 * 2 * Method::ALL.len() * 2);
    for m in &r.results {
        assert_eq!(m.horizons.len(), 9);
        for (i, h) in m.horizons.iter().enumerate() {
            assert_eq!(h.horizon, i + 1);
            // (year, age) cells: forecast years at this horizon x 41 ages
            assert_eq!(h.n_pairs, (10 - i) * 41);
        }
    }
}

#[test]
fn under_support_is_flagged_exactly_where_the_rank_exceeds_m() {
    let d = data();
    let split = SplitSpec::thirds(d[0].years()).unwrap();
    let r = expanding_backtest(&d, &split, &BacktestConfig::default()).unwrap();
    for u in &r.under_supported {
        let needed = ((1.0 - u.alpha) * (u.m as f64 + 1.0)).ceil() as usize;
        assert!(needed > u.m, "{u:?}");
    }
    // M = 11 - h; alpha = 0.05 needs M >= 19, so every horizon; alpha = 0.2
    // needs M >= 4, failing for h = 8, 9.
    assert_eq!(r.under_supported.len(), 6 * 2 * (9 + 2));
}

#[test]
fn sequential_and_parallel_agree_exactly() {
    let d = data();
    let split = SplitSpec::thirds(d[0].years()).unwrap();
    let run = |exec| {
        let cfg = BacktestConfig {
            exec,
            ..BacktestConfig::default()
        };
        expanding_backtest(&d, &split, &cfg).unwrap()
    };
    assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
}
