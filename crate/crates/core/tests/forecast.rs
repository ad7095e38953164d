use chrono::{Duration, NaiveDate};
use epf::forecast::*;
use epf::HOURS;
use ndarray::Array2;
use proptest::prelude::*;

fn day(i: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2017, 1, 1).unwrap() + Duration::days(i)
}

proptest! {
    #[test]
    fn csv_round_trip(vals in proptest::collection::vec(-1e4f64..1e4, 3 * HOURS)) {
        let m = ForecastMatrix::new(vec![day(0), day(1), day(5)], Array2::from_shape_vec((3, HOURS), vals).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        m.write_csv(&p).unwrap();
        prop_assert_eq!(ForecastMatrix::read_csv(&p).unwrap(), m);
    }
}

#[test]
fn header_layout() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.csv");
    ForecastMatrix::new(vec![day(0)], Array2::from_elem((1, HOURS), 1.5)).unwrap().write_csv(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("date,h1,h2"));
    assert!(lines.next().unwrap().starts_with("2017-01-01,1.5,"));
}

#[test]
fn appender_resumes_without_duplicate_header() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.csv");
    ForecastAppender::open(&p).unwrap().append(day(0), &[1.0; HOURS]).unwrap();
    ForecastAppender::open(&p).unwrap().append(day(1), &[2.0; HOURS]).unwrap();
    let m = ForecastMatrix::read_csv(&p).unwrap();
    assert_eq!(m.dates(), &[day(0), day(1)]);
}

#[test]
fn rejects_unsorted() {
    assert!(ForecastMatrix::new(vec![day(1), day(0)], Array2::zeros((2, HOURS))).is_err());
}
