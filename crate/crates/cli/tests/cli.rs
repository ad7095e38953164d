use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use epf::data::synthetic::{generate, SyntheticConfig};
use epf::data::{content_hash, write_dataset_csv, MarketDataset};
use epf::dnn::DnnHyperparams;
use epf::transform::ScalerKind;
use epf::ForecastMatrix;
use ndarray::Array2;

fn epf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epf"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("EPF_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_dataset(dir: &Path, ds: &MarketDataset) -> PathBuf {
    let path = dir.join(format!("{}.csv", ds.market_id()));
    write_dataset_csv(ds, &path).unwrap();
    path
}

/// 70 synthetic days; the test period is the three days from day 66.
fn setup() -> (tempfile::TempDir, MarketDataset) {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&SyntheticConfig {
        days: 70,
        ..Default::default()
    });
    write_dataset(dir.path(), &ds);
    (dir, ds)
}

fn lear_args<'a>(ds: &MarketDataset, out: &'a str, extra: &[&'a str]) -> Vec<String> {
    let mut v: Vec<String> = [
        "backtest",
        "--dataset",
        "SYN.csv",
        "--test-start",
        &ds.dates()[66].to_string(),
        "--test-end",
        &ds.dates()[68].to_string(),
        "--output",
        out,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn run(dir: &Path, args: &[String]) -> Output {
    epf(dir, &args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn usage_errors_exit_with_1_and_help_with_0() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&epf(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&epf(dir.path(), &["backtest", "--no-such-flag"])), 1);
    assert_eq!(code(&epf(dir.path(), &["--help"])), 0);
    fs::write(dir.path().join("bad.cfg"), "colour = red\n").unwrap();
    let out = epf(dir.path(), &["backtest", "--config", "bad.cfg"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("unknown config key"));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = epf(dir.path(), &["backtest", "--market", "NP", "--cache-dir", "nowhere"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("epf fetch NP"));
}

#[test]
fn malformed_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("BAD.csv"), "timestamp,price,exog1,exog2\n2020-01-01 00:00:00,x,1,2\n").unwrap();
    let out = epf(dir.path(), &["backtest", "--dataset", "BAD.csv"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn windows_outside_the_allowed_set_need_the_override() {
    let (dir, ds) = setup();
    let out = run(dir.path(), &lear_args(&ds, "run_w", &["--windows", "30"]));
    assert_eq!(code(&out), 1);
    let out = run(dir.path(), &lear_args(&ds, "run_w", &["--windows", "30", "--allow-any-window"]));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("run_w/SYN_lear_30.csv").exists());
}

#[test]
fn lear_backtest_writes_forecasts_timings_and_a_reproducible_run_directory() {
    let (dir, ds) = setup();
    let out = run(dir.path(), &lear_args(&ds, "run_a", &[]));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let run_a = dir.path().join("run_a");
    let forecast = fs::read_to_string(run_a.join("SYN_lear_56.csv")).unwrap();
    let lines: Vec<&str> = forecast.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("date,h1,h2,"));
    assert!(lines.iter().all(|l| l.split(',').count() == 25));
    assert_eq!(&lines[1][..10], ds.dates()[66].to_string());
    let timing = fs::read_to_string(run_a.join("SYN_lear_56.timing.csv")).unwrap();
    assert!(timing.starts_with("date,seconds\n"));
    assert_eq!(timing.lines().count(), 4);

    let config = fs::read_to_string(run_a.join("config.txt")).unwrap();
    assert!(config.contains("model = lear\n"));
    assert!(config.contains("windows = 56\n"));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_a.join("run.json")).unwrap()).unwrap();
    assert_eq!(
        manifest["dataset_hash"].as_str().unwrap(),
        content_hash(&dir.path().join("SYN.csv")).unwrap()
    );
    assert_eq!(manifest["seeds"], serde_json::json!([1]));

    // Rerunning from the stored config reproduces the forecasts byte for byte.
    let out = epf(dir.path(), &["backtest", "--config", "run_a/config.txt", "--output", "run_b"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read(run_a.join("SYN_lear_56.csv")).unwrap(), fs::read(dir.path().join("run_b/SYN_lear_56.csv")).unwrap());

    // The same directory resumes; a different experiment is refused.
    let out = run(dir.path(), &lear_args(&ds, "run_a", &[]));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(run_a.join("SYN_lear_56.csv")).unwrap(), forecast);
    let out = run(dir.path(), &lear_args(&ds, "run_a", &["--windows", "84"]));
    assert_eq!(code(&out), 1);
}

#[test]
fn interrupted_backtest_resumes_from_the_last_completed_day() {
    let (dir, ds) = setup();
    let out = run(dir.path(), &lear_args(&ds, "full", &[]));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let full = fs::read_to_string(dir.path().join("full/SYN_lear_56.csv")).unwrap();

    // Simulate a crash after the first day: keep the header and one row.
    let out = run(dir.path(), &lear_args(&ds, "part", &[]));
    assert_eq!(code(&out), 0);
    let part = dir.path().join("part/SYN_lear_56.csv");
    let first_two: String = full.lines().take(2).map(|l| format!("{l}\n")).collect();
    fs::write(&part, first_two).unwrap();
    let out = run(dir.path(), &lear_args(&ds, "part", &[]));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(&part).unwrap(), full);
}

#[test]
fn changed_dataset_is_refused_for_an_existing_run() {
    let (dir, ds) = setup();
    assert_eq!(code(&run(dir.path(), &lear_args(&ds, "run", &[]))), 0);
    let other = generate(&SyntheticConfig {
        days: 70,
        seed: 99,
        ..Default::default()
    });
    write_dataset(dir.path(), &other);
    let out = run(dir.path(), &lear_args(&ds, "run", &[]));
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn evaluating_a_forecast_against_itself_gives_zero_errors() {
    let (dir, ds) = setup();
    let f = ForecastMatrix::actuals(&ds);
    f.write_csv(dir.path().join("self.csv")).unwrap();
    let out = epf(dir.path(), &["evaluate", "--actuals", "self.csv", "self.csv", "-o", "report.csv"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("model,metric,value"));
    let rows: Vec<(String, f64)> = lines
        .map(|l| {
            let p: Vec<&str> = l.split(',').collect();
            assert_eq!(p[0], "self");
            (p[1].to_string(), p[2].parse().unwrap())
        })
        .collect();
    for m in ["MAE", "RMSE", "MAPE", "sMAPE", "rMAE", "rRMSE"] {
        let v = rows.iter().find(|(n, _)| n == m).unwrap_or_else(|| panic!("{m} missing")).1;
        assert_eq!(v, 0.0, "{m}");
    }
}

#[test]
fn evaluate_against_the_dataset_scores_a_backtest() {
    let (dir, ds) = setup();
    assert_eq!(code(&run(dir.path(), &lear_args(&ds, "run", &[]))), 0);
    let out = epf(
        dir.path(),
        &["evaluate", "--actuals", "SYN.csv", "run/SYN_lear_56.csv", "--json", "m.json", "--naive", "calendar"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 7, "MASE included when history exists");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(json["naive"], "calendar");
    assert!(stdout(&out).contains("rMAE"));
}

#[test]
fn dm_on_identical_files_leaves_every_cell_blank() {
    let (dir, ds) = setup();
    let actuals = ForecastMatrix::actuals(&ds);
    actuals.write_csv(dir.path().join("a.csv")).unwrap();
    actuals.write_csv(dir.path().join("b.csv")).unwrap();
    let out = epf(dir.path(), &["test", "--actuals", "SYN.csv", "a.csv", "b.csv", "--test", "dm"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("blank"));
    let csv = fs::read_to_string(dir.path().join("pvalues.csv")).unwrap();
    for line in csv.lines().skip(1) {
        assert!(line.split(',').skip(1).all(str::is_empty), "{line}");
    }
    assert!(dir.path().join("pvalues.svg").exists());
}

#[test]
fn gw_test_writes_pvalues_and_a_chessboard() {
    let (dir, ds) = setup();
    let actuals = ForecastMatrix::actuals(&ds);
    let (dates, values) = actuals.clone().into_parts();
    let noisy = |scale: f64, seed: u64| {
        let mut s = seed;
        let v = Array2::from_shape_fn(values.dim(), |ix| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            values[ix] + scale * (((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5)
        });
        ForecastMatrix::new(dates.clone(), v).unwrap()
    };
    noisy(1.0, 1).write_csv(dir.path().join("good.csv")).unwrap();
    noisy(30.0, 2).write_csv(dir.path().join("bad.csv")).unwrap();
    let out = epf(
        dir.path(),
        &["test", "--actuals", "SYN.csv", "good.csv", "bad.csv", "--test", "gw:1", "--norm", "2", "-o", "gw.svg"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("gw.csv")).unwrap();
    let rows: Vec<Vec<String>> = csv.lines().map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows[0], ["", "good", "bad"]);
    // Row "bad", column "good": good is better, so the p-value is tiny.
    let p: f64 = rows[2][1].parse().unwrap();
    assert!(p < 0.01, "p = {p}");
    let svg = fs::read_to_string(dir.path().join("gw.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(code(&epf(dir.path(), &["test", "--actuals", "SYN.csv", "good.csv", "--test", "gw"])), 1);
    assert_eq!(code(&epf(dir.path(), &["test", "--actuals", "SYN.csv", "good.csv", "bad.csv", "--norm", "3"])), 1);
}

#[test]
fn report_summarises_every_forecast_in_a_run_directory() {
    let (dir, ds) = setup();
    assert_eq!(code(&run(dir.path(), &lear_args(&ds, "run", &[]))), 0);
    fs::copy(dir.path().join("run/config.txt"), dir.path().join("naive.cfg")).unwrap();
    // A naive run into the same directory needs the same configuration, so
    // write it elsewhere and copy the forecast over.
    let out = epf(dir.path(), &["backtest", "--config", "naive.cfg", "--model", "naive", "--output", "naive_run"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    fs::copy(dir.path().join("naive_run/SYN_naive_lag7.csv"), dir.path().join("run/SYN_naive_lag7.csv")).unwrap();

    let out = epf(dir.path(), &["report", "run"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = fs::read_to_string(dir.path().join("run/summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "model,MAE,RMSE,MAPE,sMAPE,rMAE,rRMSE,MASE,seconds_per_day");
    assert_eq!(lines.len(), 3);
    let lear: Vec<&str> = lines.iter().find(|l| l.starts_with("SYN_lear_56,")).unwrap().split(',').collect();
    assert!(lear[8].parse::<f64>().unwrap() > 0.0, "timing from the log");
    let naive: Vec<&str> = lines.iter().find(|l| l.starts_with("SYN_naive_lag7,")).unwrap().split(',').collect();
    assert_eq!(naive[5].parse::<f64>().unwrap(), 1.0, "rMAE of the lag7 naive");
    assert!(dir.path().join("run/summary_rMAE.svg").exists());
    assert_eq!(code(&epf(dir.path(), &["report", "nowhere"])), 1);
}

#[test]
fn lear_ensemble_writes_members_and_the_mean() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&SyntheticConfig {
        days: 100,
        ..Default::default()
    });
    write_dataset(dir.path(), &ds);
    let out = epf(
        dir.path(),
        &[
            "backtest",
            "--dataset",
            "SYN.csv",
            "--model",
            "lear_ensemble",
            "--windows",
            "56,84",
            "--test-start",
            &ds.dates()[98].to_string(),
            "--output",
            "ens",
            "--jobs",
            "2",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let read = |f: &str| ForecastMatrix::read_csv(dir.path().join("ens").join(f)).unwrap();
    let (a, b, e) = (read("SYN_lear_56.csv"), read("SYN_lear_84.csv"), read("SYN_lear_ensemble.csv"));
    assert_eq!(e.n_days(), 2);
    for ((x, y), z) in a.values().iter().zip(b.values().iter()).zip(e.values().iter()) {
        assert!((z - (x + y) / 2.0).abs() <= 1e-12 * z.abs().max(1.0));
    }
    assert!(dir.path().join("ens/SYN_lear_84.timing.csv").exists());
}

fn tiny_dnn_args(ds: &MarketDataset, out: &str) -> Vec<String> {
    [
        "--dataset",
        "SYN.csv",
        "--test-start",
        &ds.dates()[84].to_string(),
        "--test-end",
        &ds.dates()[85].to_string(),
        "--total-weeks",
        "10",
        "--validation-weeks",
        "2",
        "--max-epochs",
        "15",
        "--patience",
        "3",
        "--batch-size",
        "32",
        "--output",
        out,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn hyperopt_then_dnn_backtest_in_one_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&SyntheticConfig {
        days: 90,
        ..Default::default()
    });
    write_dataset(dir.path(), &ds);
    let mut args = vec!["hyperopt".to_string()];
    args.extend(tiny_dnn_args(&ds, "study"));
    args.extend(["--model", "dnn", "--hyperopt-budget", "3", "--hyperopt-startup", "2"].map(String::from));
    let out = run(dir.path(), &args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = fs::read_to_string(dir.path().join("study/SYN_study_1.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let best = DnnHyperparams::load_json(dir.path().join("study/SYN_dnn_1.hyperparams.json")).unwrap();

    args[0] = "backtest".to_string();
    let out = run(dir.path(), &args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let f = ForecastMatrix::read_csv(dir.path().join("study/SYN_dnn_1.csv")).unwrap();
    assert_eq!(f.n_days(), 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("study/run.json")).unwrap()).unwrap();
    assert!(manifest["hyperparams"][0]["path"].as_str().unwrap().ends_with("SYN_dnn_1.hyperparams.json"));

    // The same seed and hyperparameters give identical forecasts elsewhere.
    best.save_json(dir.path().join("best.json")).unwrap();
    let mut again = vec!["backtest".to_string()];
    again.extend(tiny_dnn_args(&ds, "again"));
    again.extend(["--model", "dnn", "--hyperparams", "best.json"].map(String::from));
    let out = run(dir.path(), &again);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read(dir.path().join("again/SYN_dnn_1.csv")).unwrap(),
        fs::read(dir.path().join("study/SYN_dnn_1.csv")).unwrap()
    );
}

#[test]
fn diverging_training_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let base = generate(&SyntheticConfig {
        days: 90,
        ..Default::default()
    });
    let huge = MarketDataset::new(
        "SYN",
        base.dates().to_vec(),
        base.prices().mapv(|p| p * 1e306),
        base.exog1().to_owned(),
        base.exog2().to_owned(),
    )
    .unwrap();
    write_dataset(dir.path(), &huge);
    let hp = DnnHyperparams {
        n1: 8,
        n2: 4,
        scaler: ScalerKind::None,
        learning_rate: 0.1,
        ..Default::default()
    };
    hp.save_json(dir.path().join("hp.json")).unwrap();
    let mut args = vec!["backtest".to_string()];
    args.extend(tiny_dnn_args(&huge, "div"));
    args.extend(["--model", "dnn", "--hyperparams", "hp.json"].map(String::from));
    let out = run(dir.path(), &args);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}
