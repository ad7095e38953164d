use std::fs;

use epf::data::synthetic::{generate, SyntheticConfig};
use epf::data::{content_hash, parse_dataset_csv, test_split, write_dataset_csv, InformationSet, Market, TestPeriod};
use epf::{EpfError, HOURS};

#[test]
fn dataset_csv_round_trips_exactly() {
    let ds = generate(&SyntheticConfig {
        days: 30,
        market_id: "NP".into(),
        ..Default::default()
    });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("NP.csv");
    write_dataset_csv(&ds, &path).unwrap();
    let back = parse_dataset_csv(&path).unwrap();
    assert_eq!(back.market_id(), "NP");
    assert_eq!(back.dates(), ds.dates());
    assert_eq!(back.prices(), ds.prices());
    assert_eq!(back.exog1(), ds.exog1());
    assert_eq!(back.exog2(), ds.exog2());
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + 30 * HOURS);
}

#[test]
fn content_hash_matches_git_sha256_blob_ids() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::write(&empty, b"").unwrap();
    // Well-known id of the empty blob in SHA-256 repositories.
    assert_eq!(
        content_hash(&empty).unwrap(),
        "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
    );
    let hello = dir.path().join("hello");
    fs::write(&hello, b"hello\n").unwrap();
    assert_eq!(
        content_hash(&hello).unwrap(),
        "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
    );
}

#[test]
fn benchmark_test_period_is_the_last_728_days() {
    let ds = generate(&SyntheticConfig {
        start: Market::Np.test_start() - chrono::Duration::days(1456),
        ..Default::default()
    });
    assert!(ds.is_benchmark_length());
    let (history, period) = test_split(&ds, Market::Np.test_start()).unwrap();
    assert_eq!(history.len(), 1456);
    assert_eq!(period.n_days, 728);
    assert_eq!(period.dates().last(), ds.last_date());
}

#[test]
fn information_set_hides_the_target_day() {
    let ds = generate(&SyntheticConfig {
        days: 20,
        ..Default::default()
    });
    let info = InformationSet::new(&ds, 10).unwrap();
    assert!(info.prices(9).is_ok());
    assert!(matches!(info.prices(10), Err(EpfError::Lookahead { .. })));
    // Exogenous day-ahead forecasts of the target day are known in advance.
    assert!(info.exog1(10).is_ok());
    assert!(TestPeriod::new(&ds, ds.dates()[15], 10).is_err());
}

mod csv_io {
    use std::fmt::Write as _;

    use chrono::NaiveDate;
    use epf::data::*;
    use epf::EpfError;

    fn csv_for(days: &[(NaiveDate, Vec<u32>)], value: impl Fn(usize) -> f64) -> String {
        let mut s = String::from("timestamp,price,exog1,exog2\n");
        let mut k = 0;
        for (date, hours) in days {
            for h in hours {
                let v = value(k);
                writeln!(s, "{date} {h:02}:00:00,{v},{v},{v}").unwrap();
                k += 1;
            }
        }
        s
    }

    fn full_day() -> Vec<u32> {
        (0..24).collect()
    }

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn fall_back_day_averages_repeated_hour() {
        let mut raw: Vec<f64> = (0..25).map(|i| i as f64 * 100.0).collect();
        raw[2] = 4.0;
        raw[3] = 6.0;
        let out = normalize_calendar(&raw, 2).unwrap();
        assert_eq!(out[2], 5.0);
        assert_eq!(out[1], 100.0);
        assert_eq!(out[3], 400.0);
        assert_eq!(out[23], 2400.0);
    }

    #[test]
    fn spring_forward_day_interpolates_gap() {
        let mut raw: Vec<f64> = (0..23).map(|i| i as f64).collect();
        raw[1] = 10.0;
        raw[2] = 14.0;
        let out = normalize_calendar(&raw, 2).unwrap();
        assert_eq!(out[2], 12.0);
        assert_eq!(out[1], 10.0);
        assert_eq!(out[3], 14.0);
        assert_eq!(out[23], 22.0);
    }

    #[test]
    fn full_day_is_unchanged() {
        let raw: Vec<f64> = (0..24).map(|i| (i * i) as f64).collect();
        assert_eq!(normalize_calendar(&raw, 2).unwrap().to_vec(), raw);
    }

    #[test]
    fn bad_day_lengths_are_calendar_errors() {
        assert!(matches!(normalize_calendar(&[1.0; 22], 2), Err(EpfError::Calendar(22))));
        assert!(matches!(normalize_calendar(&[1.0; 26], 2), Err(EpfError::Calendar(26))));
    }

    #[test]
    fn constant_file_passes_through() {
        let days: Vec<_> = (0..10).map(|i| (d(2020, 1, 1) + chrono::Duration::days(i), full_day())).collect();
        let ds = parse_dataset_reader(csv_for(&days, |_| 10.0).as_bytes(), "T").unwrap();
        assert_eq!(ds.len(), 10);
        for m in [ds.prices(), ds.exog1(), ds.exog2()] {
            assert!(m.iter().all(|&v| v == 10.0));
        }
    }

    #[test]
    fn dst_days_are_accepted() {
        let spring: Vec<u32> = (0..24).filter(|&h| h != 2).collect();
        let mut fall: Vec<u32> = (0..24).collect();
        fall.insert(3, 2);
        let days = vec![
            (d(2018, 3, 24), full_day()),
            (d(2018, 3, 25), spring),
            (d(2018, 3, 26), full_day()),
        ];
        let ds = parse_dataset_reader(csv_for(&days, |k| k as f64).as_bytes(), "T").unwrap();
        assert_eq!(ds.len(), 3);
        // spring day: values 24,25 at hours 0,1 then 26 at hour 3
        assert_eq!(ds.prices()[[1, 1]], 25.0);
        assert_eq!(ds.prices()[[1, 2]], 25.5);
        assert_eq!(ds.prices()[[1, 3]], 26.0);

        let days = vec![(d(2018, 10, 27), full_day()), (d(2018, 10, 28), fall)];
        let ds = parse_dataset_reader(csv_for(&days, |k| k as f64).as_bytes(), "T").unwrap();
        // fall day values 24.. ; hour 2 readings are 26 and 27
        assert_eq!(ds.prices()[[1, 2]], 26.5);
        assert_eq!(ds.prices()[[1, 3]], 28.0);
        assert_eq!(ds.prices()[[1, 23]], 48.0);
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "timestamp,price,exog1,exog2\n2020-01-01 00:00:00,1,2,3\n2020-01-01 01:00:00,abc,2,3\n";
        match parse_dataset_reader(text.as_bytes(), "T") {
            Err(EpfError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "timestamp,price,exog1,exog2\n2020-01-01 00:00:00,1,2\n";
        assert!(matches!(
            parse_dataset_reader(text.as_bytes(), "T"),
            Err(EpfError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn missing_value_rejected() {
        let text = "timestamp,price,exog1,exog2\n2020-01-01 00:00:00,1,,3\n";
        assert!(matches!(
            parse_dataset_reader(text.as_bytes(), "T"),
            Err(EpfError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn missing_series_is_schema_error() {
        let text = "timestamp,price,exog1\n2020-01-01 00:00:00,1,2\n";
        assert!(matches!(
            parse_dataset_reader(text.as_bytes(), "T"),
            Err(EpfError::Schema(_))
        ));
    }

    #[test]
    fn half_hourly_data_is_cadence_error() {
        let mut s = String::from("timestamp,price,exog1,exog2\n");
        for i in 0..48 {
            writeln!(s, "2020-01-01 {:02}:{:02}:00,1,1,1", i / 2, (i % 2) * 30).unwrap();
        }
        assert!(matches!(
            parse_dataset_reader(s.as_bytes(), "T"),
            Err(EpfError::Cadence(_))
        ));
    }

    #[test]
    fn day_gap_is_cadence_error() {
        let days = vec![(d(2020, 1, 1), full_day()), (d(2020, 1, 3), full_day())];
        assert!(matches!(
            parse_dataset_reader(csv_for(&days, |_| 1.0).as_bytes(), "T"),
            Err(EpfError::Cadence(_))
        ));
    }

    #[test]
    fn benchmark_length_file() {
        let days: Vec<_> = (0..epf::data::BENCHMARK_DAYS)
            .map(|i| (d(2013, 1, 1) + chrono::Duration::days(i as i64), full_day()))
            .collect();
        let ds = parse_dataset_reader(csv_for(&days, |k| (k % 97) as f64).as_bytes(), "NP").unwrap();
        assert!(ds.is_benchmark_length());
        assert_eq!(ds.market_id(), "NP");
    }
}

mod fetch {
    use std::fs;
    use std::io::{BufRead, BufReader, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    use std::thread;

    use epf::data::fetch::*;
    use epf::data::Market;
    use epf::EpfError;
    use sha2::{Digest, Sha256};

    /// Minimal HTTP server answering every request with `body`.
    fn serve(body: &'static str, status: u16) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                counter.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                while reader.read_line(&mut line).unwrap_or(0) > 2 {
                    line.clear();
                }
                let reason = if status == 200 { "OK" } else { "Not Found" };
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} {reason}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
            }
        });
        (format!("http://{addr}/NP.csv"), hits)
    }

    const BODY: &str = "timestamp,price,exog1,exog2\n";

    #[test]
    fn second_fetch_hits_cache() {
        let (url, hits) = serve(BODY, 200);
        let dir = tempfile::tempdir().unwrap();
        let manifest = Manifest::bundled().with_entry("NP", &url, None);
        let first = fetch_dataset_with(&manifest, "NP", dir.path()).unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 1);
        let second = fetch_dataset_with(&manifest, "np", dir.path()).unwrap();
        assert_eq!(first, second);
        assert_eq!(hits.load(Ordering::SeqCst), 1);
        assert_eq!(fs::read_to_string(second).unwrap(), BODY);
    }

    #[test]
    fn checksum_is_verified() {
        let (url, _) = serve(BODY, 200);
        let dir = tempfile::tempdir().unwrap();
        let good = hex::encode(Sha256::digest(BODY.as_bytes()));
        let manifest = Manifest::bundled().with_entry("NP", &url, Some(&good));
        assert!(fetch_dataset_with(&manifest, "NP", dir.path()).is_ok());

        let dir = tempfile::tempdir().unwrap();
        let manifest = Manifest::bundled().with_entry("NP", &url, Some(&"0".repeat(64)));
        assert!(matches!(
            fetch_dataset_with(&manifest, "NP", dir.path()),
            Err(EpfError::Checksum { .. })
        ));
    }

    #[test]
    fn download_failure_reports_url_and_status() {
        let (url, _) = serve("gone", 404);
        let dir = tempfile::tempdir().unwrap();
        let manifest = Manifest::bundled().with_entry("NP", &url, None);
        match fetch_dataset_with(&manifest, "NP", dir.path()) {
            Err(EpfError::Transport { url: u, status }) => {
                assert_eq!(u, url);
                assert!(status.contains("404"), "{status}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_market_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(fetch_dataset("XX", dir.path()), Err(EpfError::Config(_))));
    }

    #[test]
    fn bundled_manifest_lists_all_markets() {
        let m = Manifest::bundled();
        for market in Market::ALL {
            assert!(m.url(market.id()).is_some(), "{market}");
        }
    }

    #[test]
    fn manifest_rejects_garbage() {
        assert!("NP.url".parse::<Manifest>().is_err());
        assert!("NP.colour=red".parse::<Manifest>().is_err());
        assert!("version=2".parse::<Manifest>().is_err());
    }
}

mod dataset {
    use chrono::{Duration, NaiveDate};
    use epf::data::*;
    use epf::{EpfError, HOURS};
    use ndarray::Array2;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn constant(start: NaiveDate, days: usize, value: f64) -> MarketDataset {
        let dates = (0..days).map(|i| start + Duration::days(i as i64)).collect();
        let m = Array2::from_elem((days, HOURS), value);
        MarketDataset::new("TEST", dates, m.clone(), m.clone(), m).unwrap()
    }

    #[test]
    fn np_benchmark_split() {
        let ds = constant(date(2013, 1, 1), BENCHMARK_DAYS, 1.0);
        assert_eq!(ds.last_date(), Some(date(2018, 12, 24)));
        let (history, period) = test_split(&ds, Market::Np.test_start()).unwrap();
        assert_eq!(period.end_date, date(2018, 12, 24));
        assert_eq!(period.n_days, TEST_PERIOD_DAYS);
        assert_eq!(history.len(), MAX_WINDOW_DAYS);
        assert_eq!((period.end_date - period.start_date).num_days() + 1, period.n_days as i64);
    }

    #[test]
    fn de_benchmark_split() {
        // DE data runs six 364-day years ending on 31.12.2017.
        let start = date(2017, 12, 31) - Duration::days(BENCHMARK_DAYS as i64 - 1);
        let ds = constant(start, BENCHMARK_DAYS, 1.0);
        let (_, period) = test_split(&ds, Market::De.test_start()).unwrap();
        assert_eq!(period.end_date, date(2017, 12, 31));
        assert_eq!(period.n_days, TEST_PERIOD_DAYS);
    }

    #[test]
    fn split_at_first_day_fails() {
        let ds = constant(date(2013, 1, 1), 100, 1.0);
        assert!(matches!(
            test_split_with_history(&ds, date(2013, 1, 1), 0),
            Err(EpfError::Split(_))
        ));
        assert!(matches!(test_split(&ds, date(2013, 2, 1)), Err(EpfError::Split(_))));
    }

    #[test]
    fn slice_for_two_year_window() {
        let ds = constant(date(2013, 1, 1), BENCHMARK_DAYS, 1.0);
        let slice = calibration_window_slice(&ds, date(2017, 2, 15), 104 * 7).unwrap();
        assert_eq!(slice.first_date(), date(2015, 2, 18));
        assert_eq!(slice.last_date(), date(2017, 2, 14));
    }

    #[test]
    fn slice_usable_rows_and_boundary() {
        let ds = constant(date(2013, 1, 1), 200, 1.0);
        let slice = calibration_window_slice(&ds, date(2013, 3, 1), 56).unwrap();
        assert_eq!(slice.days().len(), 56);
        assert_eq!(slice.usable_rows(), 49);
        // Day 56 (1-based) has only 55 predecessors.
        let day56 = date(2013, 1, 1) + Duration::days(55);
        assert!(matches!(
            calibration_window_slice(&ds, day56, 56),
            Err(EpfError::Slice(_))
        ));
        let day57 = day56 + Duration::days(1);
        assert!(calibration_window_slice(&ds, day57, 56).is_ok());
    }

    #[test]
    fn rolling_slices_overlap_by_all_but_one_day() {
        let ds = constant(date(2013, 1, 1), 300, 1.0);
        for w in [56usize, 84, 120] {
            for t in w..ds.len() - 1 {
                let a = CalibrationSlice::new(InformationSet::new(&ds, t).unwrap(), w).unwrap();
                let b = CalibrationSlice::new(InformationSet::new(&ds, t + 1).unwrap(), w).unwrap();
                let overlap = a.days().end.min(b.days().end) - a.days().start.max(b.days().start);
                assert_eq!(overlap, w - 1);
            }
        }
    }

    #[test]
    fn information_set_refuses_target_prices() {
        let ds = constant(date(2013, 1, 1), 20, 3.0);
        let log = AccessLog::new();
        let info = InformationSet::new(&ds, 10).unwrap().with_log(Some(&log));
        assert!(info.prices(9).is_ok());
        assert!(matches!(info.prices(10), Err(EpfError::Lookahead { .. })));
        assert!(info.exog1(10).is_ok());
        assert!(info.exog2(11).is_err());
        assert_eq!(log.lookahead_reads(), vec![PriceRead { target: 10, day: 10 }]);
    }

    #[test]
    fn rejects_gaps_and_non_finite() {
        let dates = vec![date(2020, 1, 1), date(2020, 1, 3)];
        let m = Array2::zeros((2, HOURS));
        assert!(matches!(
            MarketDataset::new("X", dates, m.clone(), m.clone(), m.clone()),
            Err(EpfError::Cadence(_))
        ));
        let mut bad = Array2::zeros((1, HOURS));
        bad[[0, 3]] = f64::NAN;
        assert!(matches!(
            MarketDataset::new("X", vec![date(2020, 1, 1)], bad, m.slice(ndarray::s![..1, ..]).to_owned(), m.slice(ndarray::s![..1, ..]).to_owned()),
            Err(EpfError::Schema(_))
        ));
    }

    #[test]
    fn market_parsing() {
        assert_eq!("np".parse::<Market>().unwrap(), Market::Np);
        assert!(matches!("XX".parse::<Market>(), Err(EpfError::Config(_))));
    }
}

mod synthetic {
    use epf::data::synthetic::*;

    #[test]
    fn deterministic_and_finite() {
        let cfg = SyntheticConfig {
            days: 100,
            ..Default::default()
        };
        let a = generate(&cfg);
        let b = generate(&cfg);
        assert_eq!(a, b);
        assert!(a.prices().iter().all(|v| v.is_finite()));
        let c = generate(&SyntheticConfig { seed: 8, ..cfg });
        assert_ne!(a.prices(), c.prices());
    }
}
