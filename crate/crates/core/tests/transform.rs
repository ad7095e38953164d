use epf::transform::*;
use epf::EpfError;
use ndarray::{array, Array2};
use proptest::prelude::*;

#[test]
fn fit_on_small_series() {
    let p = fit_asinh([1.0, 2.0, 3.0]).unwrap();
    assert_eq!(p.center, 2.0);
    assert!((p.scale - 1.4826).abs() < 1e-15);
    let p = fit_asinh([7.0; 5]).unwrap();
    assert_eq!(p, AsinhParams { center: 7.0, scale: 1.0 });
    assert_eq!(fit_asinh([-5.0, 0.0, 5.0]).unwrap().center, 0.0);
    assert_eq!(fit_asinh([1.0, 2.0, 3.0, 10.0]).unwrap().center, 2.5);
    assert!(matches!(fit_asinh(Vec::<f64>::new()), Err(EpfError::Transform(_))));
}

#[test]
fn asinh_at_center_and_signed_zero() {
    let p = AsinhParams { center: 3.0, scale: 2.0 };
    assert_eq!(apply_asinh(3.0, &p), 0.0);
    let unit = AsinhParams { center: 0.0, scale: 1.0 };
    assert_eq!(apply_asinh(0.0, &unit), apply_asinh(-0.0, &unit));
}

proptest! {
    #[test]
    fn asinh_round_trip(x in -500.0f64..3000.0, c in -50.0f64..200.0, s in 0.1f64..100.0) {
        let p = AsinhParams { center: c, scale: s };
        let back = invert_asinh(apply_asinh(x, &p), &p);
        prop_assert!((back - x).abs() <= 1e-10 * x.abs().max(1.0));
    }

    #[test]
    fn asinh_is_increasing(a in -500.0f64..3000.0, b in -500.0f64..3000.0) {
        let p = AsinhParams { center: 40.0, scale: 7.0 };
        if a < b {
            prop_assert!(apply_asinh(a, &p) < apply_asinh(b, &p));
        }
    }

    #[test]
    fn scaler_round_trip(data in proptest::collection::vec(-500.0f64..3000.0, 12..60), k in 0usize..5) {
        let rows = data.len() / 3;
        let m = Array2::from_shape_vec((rows, 3), data[..rows * 3].to_vec()).unwrap();
        let s = DnnScaler::fit(ScalerKind::ALL[k], m.view(), &[]).unwrap();
        let back = s.invert(s.apply(m.view()).unwrap().view()).unwrap();
        for (a, b) in m.iter().zip(back.iter()) {
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }
}

#[test]
fn daily_argmax_preserved() {
    let prices = [30.0, 45.0, -10.0, 120.0, 80.0];
    let p = fit_asinh(prices).unwrap();
    let t: Vec<f64> = prices.iter().map(|&x| apply_asinh(x, &p)).collect();
    let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_eq!(argmax(&prices), argmax(&t));
}

#[test]
fn scaler_kinds() {
    let m = array![[0.0], [2.0]];
    let none = DnnScaler::fit(ScalerKind::None, m.view(), &[]).unwrap();
    assert_eq!(none.apply(m.view()).unwrap(), m);
    let std = DnnScaler::fit(ScalerKind::Standardize, m.view(), &[]).unwrap();
    assert_eq!((std.shift[0], std.scale[0]), (1.0, 1.0));
    assert_eq!(std.apply(m.view()).unwrap(), array![[-1.0], [1.0]]);
    let mm = array![[10.0], [30.0]];
    let minmax = DnnScaler::fit(ScalerKind::MinMax, mm.view(), &[]).unwrap();
    assert_eq!(minmax.apply(mm.view()).unwrap(), array![[-1.0], [1.0]]);
    assert!(matches!("zscore".parse::<ScalerKind>(), Err(EpfError::Config(_))));
    assert_eq!("minmax".parse::<ScalerKind>().unwrap(), ScalerKind::MinMax);
}

#[test]
fn passthrough_columns_untouched() {
    let m = array![[100.0, 1.0], [300.0, 7.0], [200.0, 3.0]];
    let s = DnnScaler::fit(ScalerKind::AsinhMedianMad, m.view(), &[1]).unwrap();
    let t = s.apply(m.view()).unwrap();
    assert_eq!(t.column(1), m.column(1));
    assert_ne!(t.column(0), m.column(0));
}

#[test]
fn frozen_parameters_fingerprint() {
    let train = array![[1.0, 2.0], [3.0, 5.0], [4.0, 9.0]];
    let s = DnnScaler::fit(ScalerKind::Standardize, train.view(), &[]).unwrap();
    let before = s.fingerprint();
    let _ = s.apply(array![[100.0, -4.0]].view()).unwrap();
    assert_eq!(before, s.fingerprint());
    let refit = DnnScaler::fit(ScalerKind::Standardize, array![[100.0, -4.0], [0.0, 0.0]].view(), &[]).unwrap();
    assert_ne!(before, refit.fingerprint());
}
