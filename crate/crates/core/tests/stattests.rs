use chrono::{Duration, NaiveDate};
use epf::forecast::ForecastMatrix;
use epf::stattests::*;
use epf::{EpfError, HOURS};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn delta(values: Vec<f64>) -> LossDifferential {
    LossDifferential {
        values,
        norm: Norm::L1,
        variant: Variant::Multivariate,
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, mean: f64) -> Vec<f64> {
    (0..n).map(|_| mean + rng.sample::<f64, _>(StandardNormal)).collect()
}

fn errors(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, HOURS), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

#[test]
fn identical_errors_give_zero_differential() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let e = errors(&mut rng, 10, 1.0);
    for variant in [Variant::Multivariate, Variant::Univariate { hour: 5 }] {
        for norm in [Norm::L1, Norm::L2] {
            let d = loss_differential(e.view(), e.view(), norm, variant).unwrap();
            assert!(d.values.iter().all(|&v| v == 0.0));
            assert_eq!(d.values.len(), 10);
        }
    }
}

#[test]
fn single_day_l1_hand_case() {
    let mut a = Array2::zeros((1, HOURS));
    a[[0, 0]] = 1.0;
    a[[0, 1]] = -1.0;
    let b = Array2::zeros((1, HOURS));
    let d = loss_differential(a.view(), b.view(), Norm::L1, Variant::Multivariate).unwrap();
    assert_eq!(d.values, vec![2.0]);
    let d = loss_differential(a.view(), b.view(), Norm::L2, Variant::Multivariate).unwrap();
    assert!((d.values[0] - 2f64.sqrt()).abs() < 1e-15);
}

#[test]
fn shape_mismatch_rejected() {
    let a = Array2::<f64>::zeros((3, HOURS));
    let b = Array2::<f64>::zeros((4, HOURS));
    assert!(matches!(
        loss_differential(a.view(), b.view(), Norm::L1, Variant::Multivariate),
        Err(EpfError::Shape(_))
    ));
    assert!(Norm::from_p(3).is_err());
}

proptest! {
    #[test]
    fn swapping_models_negates_the_differential(seed in any::<u64>(), hour in 0usize..HOURS, p in 1u32..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = errors(&mut rng, 12, 3.0);
        let b = errors(&mut rng, 12, 2.0);
        let norm = Norm::from_p(p).unwrap();
        for variant in [Variant::Multivariate, Variant::Univariate { hour }] {
            let ab = loss_differential(a.view(), b.view(), norm, variant).unwrap();
            let ba = loss_differential(b.view(), a.view(), norm, variant).unwrap();
            for (x, y) in ab.values.iter().zip(&ba.values) {
                prop_assert_eq!(*x, -*y);
            }
        }
    }

    #[test]
    fn multivariate_l1_equals_double_sum(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = errors(&mut rng, 9, 3.0);
        let b = errors(&mut rng, 9, 2.0);
        let d = loss_differential(a.view(), b.view(), Norm::L1, Variant::Multivariate).unwrap();
        for day in 0..9 {
            let mut sa = 0.0;
            let mut sb = 0.0;
            for h in 0..HOURS {
                sa += a[[day, h]].abs();
                sb += b[[day, h]].abs();
            }
            prop_assert!((d.values[day] - (sa - sb)).abs() < 1e-12);
        }
    }
}

#[test]
fn dm_alternating_series_is_neutral() {
    let d = delta((0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect());
    let r = dm_test(&d).unwrap();
    assert_eq!(r.statistic, 0.0);
    assert!((r.p_value - 0.5).abs() < 1e-15);
}

#[test]
fn dm_constant_series_is_degenerate() {
    assert!(matches!(dm_test(&delta(vec![0.3; 50])), Err(EpfError::Degenerate(_))));
    assert!(matches!(dm_test(&delta(vec![0.0; 50])), Err(EpfError::Degenerate(_))));
}

#[test]
fn dm_is_antisymmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = gaussian(&mut rng, 200, 0.1);
    let ab = dm_test(&delta(x.clone())).unwrap();
    let ba = dm_test(&delta(x.iter().map(|v| -v).collect())).unwrap();
    assert_eq!(ab.statistic, -ba.statistic);
    assert!((ab.p_value + ba.p_value - 1.0).abs() < 1e-12);
}

#[test]
fn dm_statistic_matches_definition() {
    let x = vec![1.0, 2.0, 4.0, -1.0];
    // mean 1.5, sample variance (0.25 + 0.25 + 6.25 + 6.25) / 3 = 13/3
    let r = dm_test(&delta(x)).unwrap();
    assert!((r.statistic - 2.0 * 1.5 / (13.0f64 / 3.0).sqrt()).abs() < 1e-12);
}

#[test]
fn univariate_suite_on_identical_errors_is_all_degenerate() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let e = errors(&mut rng, 50, 1.0);
    let s = dm_univariate_suite(e.view(), e.view(), Norm::L1).unwrap();
    assert_eq!(s.results.len(), 24);
    assert!(s.results.iter().all(Option::is_none));
    assert_eq!(s.rejections, 0);
}

#[test]
fn univariate_suite_detects_uniformly_worse_model() {
    let mut majority = 0;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // |10 + δ| − |10| = δ with δ ~ N(0.5, 1)
        let b = Array2::from_elem((728, HOURS), 10.0);
        let a = Array2::from_shape_fn((728, HOURS), |_| 10.0 + 0.5 + rng.sample::<f64, _>(StandardNormal));
        let s = dm_univariate_suite(a.view(), b.view(), Norm::L1).unwrap();
        assert_eq!(s.results.len(), 24);
        if s.rejections >= 20 {
            majority += 1;
        }
    }
    assert!(majority >= 3);
}

fn rejection_rate(kind: TestKind, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reps = 2000;
    let mut rejected = 0;
    for _ in 0..reps {
        let r = run_test(&delta(gaussian(&mut rng, 728, 0.0)), kind).unwrap();
        if r.p_value < 0.05 {
            rejected += 1;
        }
    }
    rejected as f64 / reps as f64
}

#[test]
fn dm_size_is_calibrated() {
    let rate = rejection_rate(TestKind::DieboldMariano, 10);
    assert!((0.03..=0.07).contains(&rate), "DM size {rate}");
}

#[test]
fn gw_size_is_calibrated() {
    for q in 0..=2 {
        let rate = rejection_rate(TestKind::GiacominiWhite { q }, 20 + q as u64);
        assert!((0.03..=0.07).contains(&rate), "GW q={q} size {rate}");
    }
}

#[test]
fn gw_without_lags_is_an_unconditional_mean_test() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = gaussian(&mut rng, 300, 0.2);
    let r = gw_test(&delta(x.clone()), 0).unwrap();
    // With only a constant instrument, T = n mean² / mean(Δ²).
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| v * v).sum::<f64>() / n;
    assert!((r.statistic - n * mean * mean / m2).abs() < 1e-9 * r.statistic);
    // χ²₁ tail of T equals the two-sided normal tail of √T.
    let z = r.statistic.sqrt();
    let two_sided = 2.0 * (1.0 - 0.5 * (1.0 + statrs::function::erf::erf(z / 2f64.sqrt())));
    assert!((r.p_value - two_sided).abs() < 1e-10);
    assert_eq!(r.directional_p, r.p_value);
}

#[test]
fn gw_direction_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = gaussian(&mut rng, 300, -0.3);
    let r = gw_test(&delta(x), 1).unwrap();
    assert_eq!(r.directional_p, 1.0);
    assert!(r.p_value < 0.05);
}

#[test]
fn gw_singular_covariance_is_a_conditioning_error() {
    // z columns [Δ_d, Δ_{d−1}Δ_d, Δ_{d−2}Δ_d] = [±1, −1, 1] are collinear.
    let x: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    assert!(matches!(gw_test(&delta(x), 2), Err(EpfError::Conditioning(_))));
    assert!(matches!(gw_test(&delta(vec![1.0, 2.0, 3.0]), 1), Err(EpfError::Shape(_))));
    assert!(matches!(gw_test(&delta(vec![2.0; 40]), 1), Err(EpfError::Degenerate(_))));
}

fn matrix_fixture(k: usize, seed: u64) -> (Vec<(String, ForecastMatrix)>, ForecastMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 120;
    let dates: Vec<NaiveDate> = (0..n)
        .map(|i| NaiveDate::from_ymd_opt(2019, 1, 1).unwrap() + Duration::days(i))
        .collect();
    let actual = Array2::from_shape_fn((n as usize, HOURS), |_| 50.0 + 10.0 * rng.sample::<f64, _>(StandardNormal));
    let actuals = ForecastMatrix::new(dates.clone(), actual.clone()).unwrap();
    let forecasts = (0..k)
        .map(|m| {
            let scale = 1.0 + m as f64 * 0.3;
            let v = actual.mapv(|p| p + scale * rng.sample::<f64, _>(StandardNormal));
            (format!("model{m}"), ForecastMatrix::new(dates.clone(), v).unwrap())
        })
        .collect();
    (forecasts, actuals)
}

#[test]
fn ten_models_fill_ninety_cells() {
    let (forecasts, actuals) = matrix_fixture(10, 5);
    for kind in [TestKind::DieboldMariano, TestKind::GiacominiWhite { q: 1 }] {
        let m = pairwise_matrix(&forecasts, &actuals, kind, Norm::L1).unwrap();
        let filled = (0..10)
            .flat_map(|i| (0..10).map(move |j| (i, j)))
            .filter(|&(i, j)| m.get(i, j).is_some())
            .count();
        assert_eq!(filled, 90);
        assert!((0..10).all(|i| m.get(i, i).is_none()));
        for i in 0..10 {
            for j in 0..10 {
                if let Some(p) = m.get(i, j) {
                    assert!((0.0..=1.0).contains(&p));
                }
            }
        }
    }
}

#[test]
fn dm_matrix_cells_are_complements() {
    let (forecasts, actuals) = matrix_fixture(4, 6);
    let m = pairwise_matrix(&forecasts, &actuals, TestKind::DieboldMariano, Norm::L2).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                assert!((m.get(i, j).unwrap() + m.get(j, i).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }
    // model0 has the smallest errors: model0 beats model3 (row 3, column 0).
    assert!(m.get(3, 0).unwrap() < 0.05);
}

#[test]
fn identical_forecasts_leave_blank_cells() {
    let (mut forecasts, actuals) = matrix_fixture(1, 7);
    forecasts.push(("copy".into(), forecasts[0].1.clone()));
    let m = pairwise_matrix(&forecasts, &actuals, TestKind::DieboldMariano, Norm::L1).unwrap();
    assert_eq!(m.values, vec![vec![None, None], vec![None, None]]);
}

#[test]
fn matrix_csv_round_trips() {
    let (forecasts, actuals) = matrix_fixture(5, 8);
    let m = pairwise_matrix(&forecasts, &actuals, TestKind::GiacominiWhite { q: 1 }, Norm::L1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gw.csv");
    m.write_csv(&path).unwrap();
    assert_eq!(PValueMatrix::read_csv(&path).unwrap(), m);
}

#[test]
fn chessboard_colors() {
    assert_eq!(cell_color(Some(0.10)).unwrap(), "#000000");
    assert_eq!(cell_color(Some(0.5)).unwrap(), "#000000");
    assert_eq!(cell_color(Some(0.0)).unwrap(), "#006400");
    assert_eq!(cell_color(Some(0.05)).unwrap(), "#ffff00");
    assert_ne!(cell_color(Some(0.0999)).unwrap(), "#000000");
    assert_eq!(cell_color(None), None);
}

#[test]
fn chessboard_svg_and_csv_are_written() {
    let (forecasts, actuals) = matrix_fixture(3, 9);
    let m = pairwise_matrix(&forecasts, &actuals, TestKind::DieboldMariano, Norm::L1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let svg_path = dir.path().join("dm.svg");
    write_chessboard_svg(&m, "DM test", &svg_path).unwrap();
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("model2"));
    // one rect per cell, plus background and legend
    assert!(svg.matches("<rect").count() >= 9 + 1);
    assert_eq!(PValueMatrix::read_csv(dir.path().join("dm.csv")).unwrap(), m);
}

#[test]
fn test_kind_parses() {
    assert_eq!("dm".parse::<TestKind>().unwrap(), TestKind::DieboldMariano);
    assert_eq!("GW".parse::<TestKind>().unwrap(), TestKind::GiacominiWhite { q: 1 });
    assert_eq!("gw:2".parse::<TestKind>().unwrap(), TestKind::GiacominiWhite { q: 2 });
    assert!("mcs".parse::<TestKind>().is_err());
}
