use super::*;
use crate::data::{synth_sex_pair, SynthSpec};
use crate::fpca::ModelKind;
use crate::intervals::Method;
use crate::transforms::Transform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn band(lower: Vec<f64>, upper: Vec<f64>, alpha: f64) -> IntervalBand {
    IntervalBand {
        horizon: 1,
        alpha,
        method: Method::Sd,
        lower,
        upper,
        under_supported: false,
    }
}

#[test]
fn split_thirds_and_sizes() {
    let years: Vec<i32> = (1975..2023).collect();
    let s = SplitSpec::thirds(&years).unwrap();
    assert_eq!(
        (s.train_end_year, s.validation_end_year, s.test_end_year),
        (1990, 2006, 2022)
    );
    assert_eq!(s.sizes(), (16, 16, 16));
    assert_eq!(
        (
            s.calibration_horizons(),
            s.report_horizons(),
            s.test_pairs()
        ),
        (15, 15, 136)
    );
    let s = SplitSpec::thirds(&(2000..2010).collect::<Vec<_>>()).unwrap();
    assert_eq!(s.sizes(), (3, 3, 4));
    assert!(SplitSpec::thirds(&[1, 2, 3, 4, 5]).is_err());
    assert!(SplitSpec::new(2000, 2000, 2005, 2010).is_err());
    assert!(SplitSpec::new(2000, 2005, 2004, 2010).is_err());
    assert!(s.check_covers(&(2001..2010).collect::<Vec<_>>()).is_err());
}

#[test]
fn ecp_examples() {
    let b = band(vec![0.0, 0.0], vec![1.0, 1.0], 0.2);
    assert_eq!(ecp(&[b.clone()], &[vec![0.5, 0.5]]).unwrap(), 1.0);
    assert_eq!(ecp(&[b.clone()], &[vec![0.5, 2.0]]).unwrap(), 0.5);
    assert_eq!(ecp(&[b.clone()], &[vec![1.0, 0.0]]).unwrap(), 1.0);
    assert_eq!(ecp(&[], &[]), Err(Error::EmptyEvaluation));
    assert!(ecp(&[b], &[]).is_err());
}

#[test]
fn cpd_examples() {
    assert!((cpd(0.807, 0.2) - 0.007).abs() < 1e-12);
    assert_eq!(cpd(0.8, 0.2), 0.0);
    assert!((cpd(1.0, 0.2) - 0.2).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let hits = rng.random_range(0..=50usize);
        let b = band(vec![0.0; 50], vec![1.0; 50], 0.2);
        let y: Vec<f64> = (0..50).map(|i| if i < hits { 0.5 } else { 2.0 }).collect();
        let e = ecp(&[b], &[y]).unwrap();
        assert_eq!(cpd(e, 0.2), (hits as f64 / 50.0 - 0.8).abs());
    }
}

#[test]
fn interval_score_examples() {
    assert_eq!(interval_score(90.0, 110.0, 100.0, 0.2).unwrap(), 20.0);
    assert_eq!(interval_score(90.0, 110.0, 120.0, 0.2).unwrap(), 120.0);
    assert_eq!(interval_score(90.0, 110.0, 80.0, 0.05).unwrap(), 420.0);
    assert_eq!(
        interval_score(110.0, 90.0, 100.0, 0.2),
        Err(Error::InvertedInterval {
            lower: 110.0,
            upper: 90.0
        })
    );
    assert!(interval_score(1.0, 2.0, 1.5, 0.0).is_err());
}

#[test]
fn interval_score_decomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let lb: f64 = rng.random_range(-5.0..5.0);
        let ub = lb + rng.random_range(0.0..3.0);
        let y: f64 = rng.random_range(-8.0..8.0);
        let s = interval_score(lb, ub, y, 0.1).unwrap();
        let covered = lb <= y && y <= ub;
        assert!(s >= ub - lb);
        assert_eq!(s == ub - lb, covered);
    }
}

#[test]
fn aggregate_examples() {
    let m = |h, v: f64| HorizonMetrics {
        horizon: h,
        n_pairs: 1,
        ecp: v,
        cpd: v,
        mean_score: v,
    };
    let a = aggregate(&[m(1, 0.1), m(2, 0.2), m(3, 0.3)]).unwrap();
    assert!((a.cpd_mean - 0.2).abs() < 1e-15 && a.cpd_median == 0.2);
    let a = aggregate(&[m(1, 0.4), m(2, 0.4)]).unwrap();
    assert_eq!(a.values(), [0.4; 6]);
    let a = aggregate(&[m(1, 1.0), m(2, 2.0), m(3, 4.0), m(4, 8.0)]).unwrap();
    assert_eq!(a.ecp_median, 3.0);
    assert_eq!(aggregate(&[]), Err(Error::EmptyEvaluation));
}

#[test]
fn best_columns_is_argmin_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let vals: Vec<Option<f64>> = (0..6)
            .map(|_| {
                if rng.random_bool(0.1) {
                    None
                } else {
                    Some(rng.random_range(0..5) as f64)
                }
            })
            .collect();
        let min = vals.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let want: Vec<usize> = (0..6).filter(|&i| vals[i] == Some(min)).collect();
        assert_eq!(best_columns(&vals), want);
    }
    assert!(best_columns(&[None, None]).is_empty());
}

fn small_data() -> Vec<crate::data::LifeTableSeries> {
    let spec = SynthSpec {
        n_years: 15,
        n_ages: 20,
        seed: 9,
        ..SynthSpec::default()
    };
    let (f, m) = synth_sex_pair(&spec).unwrap();
    vec![f, m]
}

fn small_config() -> BacktestConfig {
    BacktestConfig {
        exec: Execution::Sequential,
        ..BacktestConfig::default()
    }
}

use crate::exec::Execution;

#[test]
fn toy_backtest_bookkeeping() {
    let data = small_data();
    // 5 training, 4 validation, 6 test years
    let split = SplitSpec::new(1975, 1979, 1983, 1989).unwrap();
    let r = expanding_backtest(&data, &split, &small_config()).unwrap();
    assert_eq!(r.report_horizons, 3);
    let cal = r.calibration(r.cells[0].cell, "F", 0.2).unwrap();
    assert_eq!(
        cal.horizons.iter().map(|c| c.m).collect::<Vec<_>>(),
        vec![4, 3, 2]
    );
    for c in &r.cells {
        assert_eq!(c.test_pairs, 6 * 7 / 2);
        assert_eq!(c.origins.len(), 4 + 6);
        assert_eq!(c.origins[0].origin_year, 1979);
    }
    // 2 transforms x 3 models x 2 sexes x 3 methods x 2 alphas
    assert_eq!(r.results.len(), 72);
    for m in &r.results {
        assert_eq!(m.horizons.len(), 3);
        for (i, h) in m.horizons.iter().enumerate() {
            // test origins 1983..=1989-h, 20 ages each
            assert_eq!(h.n_pairs, (6 - i) * 20);
            assert!((0.0..=1.0).contains(&h.ecp));
            assert_eq!(h.cpd, (h.ecp - (1.0 - m.alpha)).abs());
            assert!(h.mean_score >= 0.0);
        }
    }
    // capped when ceil((1 - alpha)(M + 1)) > M: alpha 0.2 at M = 3, 2 and
    // alpha 0.05 at every M here
    let count = |a: f64| r.under_supported.iter().filter(|u| u.alpha == a).count();
    assert_eq!(count(0.2), 6 * 2 * 2);
    assert_eq!(count(0.05), 6 * 2 * 3);
    assert!(r
        .under_supported
        .iter()
        .filter(|u| u.alpha == 0.2)
        .all(|u| u.m <= 3));
}

#[test]
fn backtest_is_schedule_independent() {
    let data = small_data();
    let split = SplitSpec::new(1975, 1979, 1983, 1989).unwrap();
    let seq = expanding_backtest(&data, &split, &small_config()).unwrap();
    let par = expanding_backtest(
        &data,
        &split,
        &BacktestConfig {
            exec: Execution::Parallel,
            ..small_config()
        },
    )
    .unwrap();
    assert_eq!(seq, par);
    assert_eq!(report_csv(&[seq.clone()]), report_csv(&[par.clone()]));
    assert_eq!(detail_json(&[seq]), detail_json(&[par]));
}

#[test]
fn freeze_k_reuses_first_origin_counts() {
    let data = small_data();
    let split = SplitSpec::new(1975, 1979, 1983, 1989).unwrap();
    let cfg = BacktestConfig {
        freeze_k: true,
        ..small_config()
    };
    let r = expanding_backtest(&data, &split, &cfg).unwrap();
    for c in &r.cells {
        let (p1, p2) = c.origins.split_at(4);
        assert!(p1.iter().all(|o| o.k_selected == p1[0].k_selected));
        assert!(p2.iter().all(|o| o.k_selected == p2[0].k_selected));
    }
}

#[test]
fn backtest_input_checks() {
    let data = small_data();
    let split = SplitSpec::new(1975, 1979, 1983, 1989).unwrap();
    let cfg = small_config();
    assert!(matches!(
        expanding_backtest(&data[..1], &split, &cfg),
        Err(Error::Config(_))
    ));
    let ufts = BacktestConfig {
        models: vec![ModelKind::Ufts],
        transforms: vec![Transform::Cdf],
        ..small_config()
    };
    let r = expanding_backtest(&data[..1], &split, &ufts).unwrap();
    assert_eq!(r.sexes, vec!["F".to_string()]);
    let late = SplitSpec::new(1975, 1979, 1983, 1995).unwrap();
    assert!(matches!(
        expanding_backtest(&data, &late, &cfg),
        Err(Error::InvalidSplit(_))
    ));
    let bad_alpha = BacktestConfig {
        alphas: vec![1.5],
        ..small_config()
    };
    assert_eq!(
        expanding_backtest(&data, &split, &bad_alpha),
        Err(Error::InvalidAlpha(1.5))
    );
}

#[test]
fn report_layout() {
    let data = small_data();
    let split = SplitSpec::new(1975, 1979, 1983, 1989).unwrap();
    let r = expanding_backtest(&data, &split, &small_config()).unwrap();
    let csv = report_csv(std::slice::from_ref(&r));
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "alpha,k_rule,sex,metric,approach,CDF-UFTS,CDF-MFTS,CDF-MLFTS,CLR-UFTS,CLR-MFTS,CLR-MLFTS,best"
    );
    // 2 alphas x 2 sexes x 6 metrics x 3 approaches
    assert_eq!(lines.clone().count(), 72);
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 12);
        let vals: Vec<f64> = f[5..11].iter().map(|v| v.parse().unwrap()).collect();
        if f[3].starts_with("M[E") || f[3] == "ECP" {
            assert!(f[11].is_empty());
        } else {
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(f[11].split(';').all(|name| {
                let i = [
                    "CDF-UFTS",
                    "CDF-MFTS",
                    "CDF-MLFTS",
                    "CLR-UFTS",
                    "CLR-MFTS",
                    "CLR-MLFTS",
                ]
                .iter()
                .position(|c| *c == name)
                .unwrap();
                vals[i] == min
            }));
        }
    }
    let cal = calibration_csv(std::slice::from_ref(&r));
    let mut lines = cal.lines();
    assert_eq!(
        lines.next().unwrap(),
        "transform,model,horizon,M,xi_0.2_EVR_F,xi_0.2_EVR_M,xi_0.05_EVR_F,xi_0.05_EVR_M"
    );
    assert_eq!(lines.count(), 6 * 3);
    let json: serde_json::Value = serde_json::from_str(&detail_json(&[r])).unwrap();
    assert_eq!(json[0]["results"].as_array().unwrap().len(), 72);
}
