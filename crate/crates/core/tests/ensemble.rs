use chrono::{Duration, NaiveDate};
use epf::data::synthetic::{generate, SyntheticConfig};
use epf::data::TestPeriod;
use epf::dnn::{DnnConfig, DnnHyperparams, SplitShape};
use epf::ensemble::*;
use epf::forecast::ForecastMatrix;
use epf::lear::LearConfig;
use epf::transform::ScalerKind;
use epf::{EpfError, HOURS};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dates(n: usize) -> Vec<NaiveDate> {
    (0..n)
        .map(|i| NaiveDate::from_ymd_opt(2020, 3, 1).unwrap() + Duration::days(i as i64))
        .collect()
}

fn constant(n: usize, v: f64) -> ForecastMatrix {
    ForecastMatrix::new(dates(n), Array2::from_elem((n, HOURS), v)).unwrap()
}

#[test]
fn mean_of_two_and_four_is_three() {
    let m = combine_mean(&[&constant(2, 2.0), &constant(2, 4.0)]).unwrap();
    assert!(m.values().iter().all(|&v| v == 3.0));
}

#[test]
fn single_member_and_identical_members_are_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let f = ForecastMatrix::new(dates(5), Array2::from_shape_fn((5, HOURS), |_| rng.random_range(-50.0..200.0))).unwrap();
    assert_eq!(combine_mean(&[&f]).unwrap(), f);
    assert_eq!(combine_mean(&[&f, &f, &f, &f]).unwrap(), f);
}

#[test]
fn mismatched_members_are_rejected() {
    let a = constant(3, 1.0);
    let b = ForecastMatrix::new(dates(4)[1..].to_vec(), Array2::zeros((3, HOURS))).unwrap();
    assert!(matches!(combine_mean(&[&a, &b]), Err(EpfError::Combine(_))));
    assert!(matches!(combine_mean(&[]), Err(EpfError::Combine(_))));
}

proptest! {
    #[test]
    fn combine_is_permutation_invariant_and_convex(seed in any::<u64>(), k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let members: Vec<ForecastMatrix> = (0..k)
            .map(|_| ForecastMatrix::new(dates(6), Array2::from_shape_fn((6, HOURS), |_| rng.random_range(-1e3..1e3))).unwrap())
            .collect();
        let refs: Vec<&ForecastMatrix> = members.iter().collect();
        let mut shuffled = refs.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let a = combine_mean(&refs).unwrap();
        prop_assert_eq!(&a, &combine_mean(&shuffled).unwrap());
        let actuals = ForecastMatrix::new(dates(6), Array2::from_shape_fn((6, HOURS), |_| rng.random_range(-1e3..1e3))).unwrap();
        let (e, mean) = check_convexity(&actuals, &a, &refs).unwrap();
        prop_assert!(e <= mean * (1.0 + 1e-12));
    }
}

#[test]
fn lear_ensemble_runs_the_four_windows() {
    let ds = generate(&SyntheticConfig {
        days: 1456 + 10,
        ..Default::default()
    });
    let period = TestPeriod::new(&ds, ds.dates()[1458], 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = EnsembleOptions {
        output_dir: Some(dir.path().to_path_buf()),
        parallel_members: true,
        jobs: 1,
        timing_logs: true,
    };
    let out = run_lear_ensemble(&ds, &period, &LEAR_WINDOWS, &LearConfig::new(56), &opts).unwrap();
    assert_eq!(out.members.len(), 4);
    let names: Vec<&str> = out.members.iter().map(|(n, _)| n.as_str()).collect();
    let m = ds.market_id();
    assert_eq!(names, [56, 84, 1092, 1456].map(|w| format!("{m}_lear_{w}")).iter().map(String::as_str).collect::<Vec<_>>());
    for (name, member) in &out.members {
        assert_eq!(member.forecasts.n_days(), 2);
        let on_disk = ForecastMatrix::read_csv(dir.path().join(format!("{name}.csv"))).unwrap();
        assert_eq!(on_disk, member.forecasts);
        let timings = epf::backtest::read_timing_log(&dir.path().join(format!("{name}.timing.csv"))).unwrap();
        assert_eq!(timings.len(), 2);
    }
    let on_disk = ForecastMatrix::read_csv(dir.path().join(format!("{m}_lear_ensemble.csv"))).unwrap();
    assert_eq!(on_disk, out.ensemble);
    let actuals = ForecastMatrix::actuals_for(&ds, &period);
    check_convexity(&actuals, &out.ensemble, &out.member_forecasts()).unwrap();

    // A rerun resumes every member from its file.
    let again = run_lear_ensemble(&ds, &period, &LEAR_WINDOWS, &LearConfig::new(56), &opts).unwrap();
    assert_eq!(again.ensemble, out.ensemble);
}

fn small_dnn(seed: u64) -> DnnConfig {
    let hp = DnnHyperparams {
        n1: 12,
        n2: 6,
        learning_rate: 3e-3,
        scaler: ScalerKind::AsinhMedianMad,
        ..Default::default()
    };
    let mut cfg = DnnConfig::new(hp, seed);
    cfg.shape = SplitShape {
        total_weeks: 10,
        validation_weeks: 2,
    };
    cfg.train.max_epochs = 20;
    cfg.train.patience = 4;
    cfg.train.batch_size = 32;
    cfg
}

#[test]
fn dnn_ensemble_members_differ_by_seed() {
    let ds = generate(&SyntheticConfig {
        days: 90,
        ..Default::default()
    });
    let period = TestPeriod::new(&ds, ds.dates()[85], 3).unwrap();
    let configs: Vec<DnnConfig> = (1..=4).map(small_dnn).collect();
    let out = run_dnn_ensemble(&ds, &period, &configs, &EnsembleOptions::default()).unwrap();
    assert_eq!(out.members.len(), 4);
    assert_eq!(out.members[1].0, format!("{}_dnn_2", ds.market_id()));
    let f = out.member_forecasts();
    assert!(f.windows(2).any(|w| w[0] != w[1]), "members with distinct seeds should differ");
    let actuals = ForecastMatrix::actuals_for(&ds, &period);
    check_convexity(&actuals, &out.ensemble, &f).unwrap();

    let mut reversed = f.clone();
    reversed.reverse();
    assert_eq!(combine_mean(&reversed).unwrap(), out.ensemble);
}

#[test]
fn convexity_violation_is_reported() {
    let actuals = constant(2, 0.0);
    let ensemble = constant(2, 10.0);
    let members = [constant(2, 1.0), constant(2, -1.0)];
    let r = check_convexity(&actuals, &ensemble, &members.iter().collect::<Vec<_>>());
    assert!(matches!(r, Err(EpfError::Combine(_))));
}
