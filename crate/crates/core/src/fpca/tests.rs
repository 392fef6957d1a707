use super::*;
use crate::data::{AgeGrid, Sex};
use crate::transforms::Transform;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn series(x: DMatrix<f64>) -> UnconstrainedSeries {
    let p = x.ncols();
    UnconstrainedSeries::new(
        (1975..1975 + x.nrows() as i32).collect(),
        x,
        Transform::Clr,
        1e5,
        AgeGrid::single_years(p).unwrap(),
        Sex::Female,
    )
    .unwrap()
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, descending.
fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

fn basis(k: usize, p: usize) -> Vec<f64> {
    crate::data::cosine_basis(k, p)
}

/// `n x p` rows: sum_k sd_k z_tk basis_k + noise.
fn planted(n: usize, p: usize, sds: &[f64], noise: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    let bases: Vec<Vec<f64>> = (1..=sds.len()).map(|k| basis(k, p)).collect();
    let mut x = DMatrix::zeros(n, p);
    for t in 0..n {
        for (sd, b) in sds.iter().zip(&bases) {
            let s = sd * z.sample(&mut rng);
            for j in 0..p {
                x[(t, j)] += s * b[j];
            }
        }
        for j in 0..p {
            x[(t, j)] += 2.0 + noise * z.sample(&mut rng);
        }
    }
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn rank_one_is_recovered_exactly() {
    let x = planted(20, 15, &[3.0], 0.0, 1);
    let m = fit_ufts(&series(x.clone()), KRule::Fixed(1)).unwrap();
    let total: f64 = m.common.eigenvalues.iter().sum();
    assert!((m.common.eigenvalues[0] - total).abs() <= 1e-10 * total);
    let fit = m.fitted();
    for t in 0..20 {
        let row: Vec<f64> = x.row(t).iter().copied().collect();
        assert!(max_abs_diff(&fit[0][t], &row) <= 1e-10);
    }
}

#[test]
fn eigenvalues_match_independent_solver() {
    let x = planted(30, 12, &[4.0, 2.0], 0.1, 2);
    let m = fit_ufts(&series(x.clone()), KRule::Fixed(2)).unwrap();
    let mean = column_means(&x);
    let xc = centered(&x, &mean);
    let cov = (xc.transpose() * &xc) / 29.0;
    let oracle = jacobi_eigenvalues(cov.clone());
    for (a, b) in m.common.eigenvalues.iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-9 * oracle[0], "{a} vs {b}");
    }
    // trace identity
    let trace: f64 = (0..12).map(|i| cov[(i, i)]).sum();
    let sum: f64 = m.common.eigenvalues.iter().sum();
    assert!((trace - sum).abs() <= 1e-8 * trace);
}

#[test]
fn evr_picks_planted_rank_two() {
    let x = planted(48, 111, &[3.0, 2.0], 0.01, 3);
    let m = fit_ufts(&series(x.clone()), KRule::Evr(EvrGate::Leading)).unwrap();
    assert_eq!(m.common.k_selected, 2);
    // the selection agrees with the selector applied to oracle eigenvalues
    let xc = centered(&x, &column_means(&x));
    let oracle = jacobi_eigenvalues((xc.transpose() * &xc) / 47.0);
    let clamped: Vec<f64> = oracle.iter().map(|v| v.max(0.0)).collect();
    assert_eq!(select_k(&clamped, 48, EvrGate::Leading), 2);
}

#[test]
fn orthonormal_sorted_and_projected() {
    let x = planted(25, 20, &[5.0, 3.0, 1.0], 0.2, 4);
    let s = series(x.clone());
    let m = fit_ufts(&s, KRule::Fixed(5)).unwrap();
    let phi = &m.common.eigenfunctions;
    for i in 0..5 {
        for j in 0..5 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((dot(&phi[i], &phi[j]) - want).abs() <= 1e-8);
        }
        // sign convention
        let big = phi[i]
            .iter()
            .copied()
            .fold(0.0_f64, |a, v| if v.abs() > a.abs() { v } else { a });
        assert!(big > 0.0);
    }
    assert!(m.common.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    assert!(m.common.eigenvalues.iter().all(|&v| v >= 0.0));
    let xc = centered(&x, &m.means[0]);
    for t in 0..25 {
        let row: Vec<f64> = xc.row(t).iter().copied().collect();
        for k in 0..5 {
            assert!((m.common.scores[t][k] - dot(&row, &phi[k])).abs() <= 1e-8);
        }
    }
}

#[test]
fn constant_series_has_zero_scores() {
    let x = DMatrix::from_fn(6, 5, |_, j| j as f64);
    let m = fit_ufts(&series(x), KRule::Fixed(2)).unwrap();
    assert!(m.common.scores.iter().flatten().all(|s| s.abs() < 1e-12));
    assert!(m.common.eigenvalues.iter().all(|&v| v.abs() < 1e-12));
}

#[test]
fn truncation_error_equals_dropped_eigenvalues() {
    let (n, p) = (30, 10);
    let x = planted(n, p, &[4.0, 2.0, 1.0], 0.3, 5);
    let m = fit_ufts(&series(x.clone()), KRule::Fixed(2)).unwrap();
    let fit = m.fitted();
    let mut mse = 0.0;
    for t in 0..n {
        for j in 0..p {
            mse += (x[(t, j)] - fit[0][t][j]).powi(2);
        }
    }
    mse /= n as f64;
    let dropped: f64 = m.common.eigenvalues[2..].iter().sum::<f64>() * (n - 1) as f64 / n as f64;
    assert!((mse - dropped).abs() <= 1e-8 * dropped);
}

#[test]
fn full_rank_recovers_input() {
    let (n, p) = (8, 12);
    let x = planted(n, p, &[3.0, 2.0, 1.5, 1.0, 0.8, 0.6, 0.4], 0.0, 6);
    let m = fit_ufts(&series(x.clone()), KRule::Fixed(n - 1)).unwrap();
    let fit = m.fitted();
    for t in 0..n {
        let row: Vec<f64> = x.row(t).iter().copied().collect();
        assert!(max_abs_diff(&fit[0][t], &row) <= 1e-8);
    }
}

#[test]
fn zero_scores_give_mean_and_shape_is_checked() {
    let m = fit_ufts(&series(planted(10, 6, &[2.0], 0.1, 7)), KRule::Fixed(2)).unwrap();
    let curves = m.reconstruct(&BlockScores::zeros(&m)).unwrap();
    assert_eq!(curves[0], m.means[0]);
    let bad = BlockScores {
        common: vec![1.0],
        specific: vec![],
    };
    assert!(matches!(
        m.reconstruct(&bad),
        Err(Error::DimensionMismatch(_))
    ));
}

#[test]
fn fixed_rule_bounds() {
    let s = series(planted(5, 4, &[1.0], 0.1, 8));
    assert!(matches!(
        fit_ufts(&s, KRule::Fixed(5)),
        Err(Error::InvalidK(_))
    ));
    assert!(matches!(
        fit_ufts(&s, KRule::Fixed(0)),
        Err(Error::InvalidK(_))
    ));
    let short = series(planted(2, 4, &[1.0], 0.1, 8));
    assert!(matches!(
        fit_ufts(&short, KRule::Fixed(1)),
        Err(Error::InsufficientData { .. })
    ));
}

#[test]
fn mfts_of_identical_series_is_symmetric() {
    let x = planted(20, 10, &[3.0, 1.0], 0.1, 9);
    let s = series(x);
    let m = fit_mfts(&s, &s, KRule::Fixed(2)).unwrap();
    for phi in &m.common.eigenfunctions {
        for j in 0..10 {
            assert!((phi[j] - phi[j + 10]).abs() <= 1e-8);
        }
    }
    let fit = m.fitted();
    for t in 0..20 {
        assert!(max_abs_diff(&fit[0][t], &fit[1][t]) <= 1e-10);
    }
}

#[test]
fn mfts_separates_independent_blocks() {
    // female driven by basis 1, male by basis 2, with sample-orthogonal scores
    let (n, p) = (60, 15);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let z = Normal::new(0.0, 1.0).unwrap();
    let (b1, b2) = (basis(1, p), basis(2, p));
    let mut xf = DMatrix::zeros(n, p);
    let mut xm = DMatrix::zeros(n, p);
    let w = std::f64::consts::TAU / n as f64;
    for t in 0..n {
        let (sf, sm) = (4.0 * (w * t as f64).cos(), 2.0 * (2.0 * w * t as f64).sin());
        for j in 0..p {
            xf[(t, j)] = sf * b1[j] + 0.01 * z.sample(&mut rng);
            xm[(t, j)] = sm * b2[j] + 0.01 * z.sample(&mut rng);
        }
    }
    let m = fit_mfts(&series(xf), &series(xm), KRule::Fixed(2)).unwrap();
    let phi = &m.common.eigenfunctions;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // component 1 lives on the female half, component 2 on the male half
    assert!(norm(&phi[0][p..]) < 0.05);
    assert!(norm(&phi[1][..p]) < 0.05);
}

#[test]
fn mfts_full_components_complete() {
    let (n, p) = (6, 4);
    let xf = planted(n, p, &[2.0, 1.0], 0.5, 11);
    let xm = planted(n, p, &[1.0, 2.0], 0.5, 12);
    let m = fit_mfts(
        &series(xf.clone()),
        &series(xm.clone()),
        KRule::Fixed(n - 1),
    )
    .unwrap();
    let fit = m.fitted();
    for t in 0..n {
        let (rf, rm): (Vec<f64>, Vec<f64>) = (
            xf.row(t).iter().copied().collect(),
            xm.row(t).iter().copied().collect(),
        );
        assert!(max_abs_diff(&fit[0][t], &rf) <= 1e-8);
        assert!(max_abs_diff(&fit[1][t], &rm) <= 1e-8);
    }
}

#[test]
fn mfts_standardization_round_trips() {
    let (n, p) = (6, 4);
    let xf = planted(n, p, &[20.0, 10.0], 0.5, 13);
    let xm = planted(n, p, &[1.0, 2.0], 0.5, 14);
    let m = fit_mfts_with(
        &series(xf.clone()),
        &series(xm),
        KRule::Fixed(n - 1),
        MftsOptions { standardize: true },
    )
    .unwrap();
    assert!(m.block_scales[0] > m.block_scales[1]);
    let fit = m.fitted();
    let rf: Vec<f64> = xf.row(0).iter().copied().collect();
    assert!(max_abs_diff(&fit[0][0], &rf) <= 1e-8);
}

#[test]
fn mlfts_identical_series_share_specific_blocks() {
    let s = series(planted(20, 10, &[3.0, 1.0], 0.1, 15));
    let m = fit_mlfts(&s, &s, KRule::Fixed(2)).unwrap();
    // the common block is the single-series fit; both remainders coincide
    let u = fit_ufts(&s, KRule::Fixed(2)).unwrap();
    assert_eq!(m.common.eigenvalues, u.common.eigenvalues);
    assert_eq!(m.specific[0], m.specific[1]);
    let dropped: f64 = u.common.eigenvalues[2..].iter().sum();
    let spec_total: f64 = m.specific[0].eigenvalues.iter().sum();
    assert!((spec_total - dropped).abs() < 1e-9 * dropped.max(1.0));
}

#[test]
fn mlfts_common_plus_specific_selection() {
    // shared component on basis 1, independent sex-specific components on basis 3
    let (n, p) = (48, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let z = Normal::new(0.0, 1.0).unwrap();
    let (b1, b3) = (basis(1, p), basis(3, p));
    let mut xf = DMatrix::zeros(n, p);
    let mut xm = DMatrix::zeros(n, p);
    for t in 0..n {
        let c = 5.0 * z.sample(&mut rng);
        let (uf, um) = (1.5 * z.sample(&mut rng), 1.5 * z.sample(&mut rng));
        for j in 0..p {
            xf[(t, j)] = c * b1[j] + uf * b3[j] + 0.005 * z.sample(&mut rng);
            xm[(t, j)] = c * b1[j] + um * b3[j] + 0.005 * z.sample(&mut rng);
        }
    }
    let m = fit_mlfts(&series(xf), &series(xm), KRule::Evr(EvrGate::Leading)).unwrap();
    assert_eq!(m.k_selected(), vec![1, 1, 1]);
}

#[test]
fn mlfts_decomposition_identity() {
    let (n, p) = (7, 5);
    let xf = planted(n, p, &[2.0, 1.0], 0.4, 17);
    let xm = planted(n, p, &[1.5, 1.0], 0.4, 18);
    let m = fit_mlfts(&series(xf.clone()), &series(xm.clone()), KRule::Fixed(p)).unwrap();
    let fit = m.fitted();
    for t in 0..n {
        let (rf, rm): (Vec<f64>, Vec<f64>) = (
            xf.row(t).iter().copied().collect(),
            xm.row(t).iter().copied().collect(),
        );
        assert!(max_abs_diff(&fit[0][t], &rf) <= 1e-8);
        assert!(max_abs_diff(&fit[1][t], &rm) <= 1e-8);
    }
}

#[test]
fn joint_models_reject_mismatched_inputs() {
    let a = series(planted(10, 5, &[1.0], 0.1, 19));
    let b = series(planted(10, 6, &[1.0], 0.1, 20));
    assert!(matches!(
        fit_mfts(&a, &b, KRule::Fixed(1)),
        Err(Error::DimensionMismatch(_))
    ));
    assert!(matches!(
        fit_mlfts(&a, &a.head(8), KRule::Fixed(1)),
        Err(Error::DimensionMismatch(_))
    ));
    assert!(fit(ModelKind::Mfts, &[&a], KRule::Fixed(1)).is_err());
}

#[test]
fn model_dump_round_trips() {
    let m = fit_ufts(&series(planted(10, 6, &[2.0], 0.1, 21)), KRule::Fixed(2)).unwrap();
    let back: FpcaModel = serde_json::from_str(&m.to_json()).unwrap();
    assert_eq!(back, m);
}

#[test]
fn k_rule_parsing() {
    assert_eq!(
        "evr".parse::<KRule>().unwrap(),
        KRule::Evr(EvrGate::Leading)
    );
    assert_eq!(
        "evr-adjacent".parse::<KRule>().unwrap(),
        KRule::Evr(EvrGate::Adjacent)
    );
    assert_eq!("6".parse::<KRule>().unwrap(), KRule::Fixed(6));
    assert_eq!("K=6".parse::<KRule>().unwrap(), KRule::Fixed(6));
    assert!("0".parse::<KRule>().is_err());
}

#[test]
fn frozen_refit_keeps_counts() {
    let xf = series(planted(30, 12, &[3.0, 1.0], 0.05, 19));
    let xm = series(planted(30, 12, &[2.0, 0.8, 0.5], 0.05, 20));
    for kind in [ModelKind::Ufts, ModelKind::Mfts, ModelKind::Mlfts] {
        let data: Vec<&UnconstrainedSeries> = if kind.is_joint() {
            vec![&xf, &xm]
        } else {
            vec![&xf]
        };
        let full = fit(kind, &data, KRule::Evr(EvrGate::Leading)).unwrap();
        let frozen = fit_frozen(kind, &data, &full.k_selected(), MftsOptions::default()).unwrap();
        assert_eq!(frozen, full);
        let ks: Vec<usize> = full.k_selected().iter().map(|k| k + 1).collect();
        assert_eq!(
            fit_frozen(kind, &data, &ks, MftsOptions::default())
                .unwrap()
                .k_selected(),
            ks
        );
    }
    assert!(fit_frozen(ModelKind::Mlfts, &[&xf, &xm], &[1], MftsOptions::default()).is_err());
}
