use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use chrono::{Duration, NaiveDate};
use epf::backtest::{read_timing_log, BacktestOptions};
use epf::data::{content_hash, parse_dataset_reader, MarketDataset, TestPeriod};
use epf::dnn::{self, DnnConfig, DnnHyperparams};
use epf::ensemble::{run_dnn_ensemble, run_lear_ensemble, EnsembleOptions, EnsembleOutput};
use epf::hyperopt::{run_study, StudyConfig, TpeOptions};
use epf::lear::{self, LearConfig};
use epf::metrics::{evaluate as evaluate_models, naive_forecast, EvaluationReport, Metric, MetricContext, NaiveKind};
use epf::stattests::{pairwise_matrix, write_chessboard_svg, Norm, PValueMatrix, TestKind};
use epf::{EpfError, ForecastMatrix};
use rayon::prelude::*;
use serde_json::json;
use tracing::{info, warn};

use crate::config::{ExperimentConfig, HyperparamSource, ModelKind, PartialConfig, RawConfig};
use crate::run_dir;

/// Reads the dataset named by the config, labelled with its market id.
fn load_dataset(partial: &PartialConfig) -> anyhow::Result<MarketDataset> {
    let path = &partial.dataset;
    let file = File::open(path).map_err(|source| EpfError::Io {
        path: path.clone(),
        source,
    })
    .with_context(|| format!("dataset for {} not found; run `epf fetch {}` first", partial.market, partial.market))?;
    parse_dataset_reader(BufReader::new(file), partial.market.clone()).with_context(|| format!("reading {}", path.display()))
}

fn resolve(raw: RawConfig) -> anyhow::Result<(ExperimentConfig, MarketDataset)> {
    let partial = PartialConfig::new(raw)?;
    let dataset = load_dataset(&partial)?;
    let cfg = partial.resolve(&dataset)?;
    Ok((cfg, dataset))
}

pub fn fetch(markets: &[String], cache_dir: Option<&Path>, manifest: Option<&Path>) -> anyhow::Result<()> {
    let manifest = match manifest {
        Some(p) => epf::data::Manifest::load(p)?,
        None => epf::data::Manifest::bundled(),
    };
    let dir = epf::data::resolve_cache_dir(cache_dir);
    for market in markets {
        let path = epf::data::fetch_dataset_with(&manifest, market, &dir)?;
        // Parse once so a corrupt download is reported now, not mid-backtest.
        let ds = epf::data::parse_dataset_csv(&path)?;
        println!("{}\t{} days\t{}", path.display(), ds.len(), content_hash(&path)?);
    }
    Ok(())
}

fn hyperparams_path(dir: &Path, market: &str, member: usize) -> PathBuf {
    dir.join(format!("{market}_dnn_{member}.hyperparams.json"))
}

/// One DNN configuration per member, hyperparameters per the config's source.
fn dnn_configs(cfg: &ExperimentConfig, dir: &Path, members: usize) -> anyhow::Result<Vec<DnnConfig>> {
    let mut used = Vec::new();
    let mut configs = Vec::with_capacity(members);
    for i in 0..members {
        let path = match &cfg.hyperparams {
            HyperparamSource::Files(files) if files.len() == members => Some(files[i].clone()),
            HyperparamSource::Files(files) if files.len() == 1 => Some(files[0].clone()),
            HyperparamSource::Files(files) => {
                return Err(EpfError::Config(format!(
                    "{} hyperparameter files given for {members} member(s)",
                    files.len()
                ))
                .into())
            }
            HyperparamSource::Auto => Some(hyperparams_path(dir, &cfg.market, i + 1)).filter(|p| p.exists()),
        };
        let hyperparams = match &path {
            Some(p) => {
                used.push(json!({"member": i + 1, "path": p, "hash": content_hash(p)?}));
                DnnHyperparams::load_json(p)?
            }
            None => {
                warn!(member = i + 1, "no hyperparameter study found, using default hyperparameters");
                used.push(json!({"member": i + 1, "path": null}));
                DnnHyperparams::default()
            }
        };
        let mut config = DnnConfig::new(hyperparams, cfg.seeds[i]);
        config.train = cfg.train_options();
        config.shape = cfg.shape();
        config.mode = cfg.split_mode;
        configs.push(config);
    }
    run_dir::record(dir, "hyperparams", json!(used))?;
    Ok(configs)
}

fn summarize(path: &Path, n_days: usize, mean_seconds: Option<f64>) {
    match mean_seconds {
        Some(s) => println!("{}\t{n_days} days\t{s:.3} s/day", path.display()),
        None => println!("{}\t{n_days} days", path.display()),
    }
}

fn summarize_ensemble(dir: &Path, file: PathBuf, out: &EnsembleOutput) {
    for (name, member) in &out.members {
        summarize(&dir.join(format!("{name}.csv")), member.forecasts.n_days(), member.mean_seconds());
    }
    summarize(&dir.join(file), out.ensemble.n_days(), None);
}

pub fn backtest(raw: RawConfig, jobs: usize) -> anyhow::Result<()> {
    let (cfg, ds) = resolve(raw)?;
    let period = TestPeriod::new(&ds, cfg.test_start, cfg.test_days())?;
    let dir = run_dir::prepare(&cfg, &content_hash(&cfg.dataset)?)?;
    let market = cfg.market.as_str();
    info!(model = cfg.model.name(), market, days = period.n_days, dir = %dir.display(), "backtest");
    let day_opts = |file: PathBuf| BacktestOptions {
        jobs,
        output: Some(dir.join(&file)),
        timing_log: Some(dir.join(file.with_extension("timing.csv"))),
        audit: None,
    };
    let ensemble_opts = EnsembleOptions {
        output_dir: Some(dir.clone()),
        parallel_members: jobs > 1,
        jobs,
        timing_logs: true,
    };
    match cfg.model {
        ModelKind::Lear => {
            let w = cfg.windows[0];
            let file = lear::forecast_file_name(market, w);
            let out = lear::backtest_lear(&ds, &period, &LearConfig::new(w), &day_opts(file.clone()))?;
            summarize(&dir.join(file), out.forecasts.n_days(), out.mean_seconds());
        }
        ModelKind::LearEnsemble => {
            let base = LearConfig::new(cfg.windows[0]);
            let out = run_lear_ensemble(&ds, &period, &cfg.windows, &base, &ensemble_opts)?;
            summarize_ensemble(&dir, PathBuf::from(format!("{market}_lear_ensemble.csv")), &out);
        }
        ModelKind::Dnn => {
            let config = dnn_configs(&cfg, &dir, 1)?.remove(0);
            let file = dnn::forecast_file_name(market, 1);
            let out = dnn::backtest_dnn(&ds, &period, &config, &day_opts(file.clone()))?;
            summarize(&dir.join(file), out.forecasts.n_days(), out.mean_seconds());
        }
        ModelKind::DnnEnsemble => {
            let configs = dnn_configs(&cfg, &dir, cfg.seeds.len())?;
            let out = run_dnn_ensemble(&ds, &period, &configs, &ensemble_opts)?;
            summarize_ensemble(&dir, PathBuf::from(format!("{market}_dnn_ensemble.csv")), &out);
        }
        ModelKind::Naive => {
            let dates: Vec<NaiveDate> = period.dates().collect();
            let naive = naive_forecast(&ForecastMatrix::actuals(&ds), &dates, cfg.naive)?;
            let path = dir.join(format!("{market}_naive_{}.csv", cfg.naive.name()));
            naive.write_csv(&path)?;
            summarize(&path, naive.n_days(), None);
        }
    }
    Ok(())
}

pub fn hyperopt(raw: RawConfig) -> anyhow::Result<()> {
    let (cfg, ds) = resolve(raw)?;
    let dir = run_dir::prepare(&cfg, &content_hash(&cfg.dataset)?)?;
    let market = cfg.market.as_str();
    let results: Vec<anyhow::Result<String>> = cfg
        .seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mut study_cfg = StudyConfig::new(cfg.hyperopt_budget, seed);
            study_cfg.tpe = TpeOptions {
                n_startup: cfg.hyperopt_startup,
                ..TpeOptions::default()
            };
            study_cfg.shape = cfg.shape();
            study_cfg.train = cfg.train_options();
            let log = dir.join(format!("{market}_study_{}.jsonl", i + 1));
            let study = run_study(&ds, cfg.test_start, &study_cfg, Some(&log))?;
            let best_path = hyperparams_path(&dir, market, i + 1);
            study.export_best(&best_path)?;
            let best = study.best().expect("exported study has a best trial");
            Ok(format!(
                "{}\t{} trials ({} new)\tbest validation MAE {:.4} (trial {})\t{}",
                log.display(),
                study.trials.len(),
                study.evaluated,
                best.objective,
                best.number,
                best_path.display()
            ))
        })
        .collect();
    for r in results {
        println!("{}", r?);
    }
    Ok(())
}

/// Actual prices from a dataset file or from a forecast-format CSV.
fn load_actuals(path: &Path) -> anyhow::Result<ForecastMatrix> {
    let file = File::open(path).map_err(|source| EpfError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first).map_err(|source| EpfError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if first.trim_start().starts_with("date,") {
        Ok(ForecastMatrix::read_csv(path)?)
    } else {
        Ok(ForecastMatrix::actuals(&epf::data::parse_dataset_csv(path)?))
    }
}

fn model_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn load_forecasts(paths: &[PathBuf]) -> anyhow::Result<Vec<(String, ForecastMatrix)>> {
    let mut out: Vec<(String, ForecastMatrix)> = Vec::with_capacity(paths.len());
    for p in paths {
        let name = model_name(p);
        if out.iter().any(|(n, _)| *n == name) {
            bail!(EpfError::Config(format!("two forecast files are both named {name}")));
        }
        let f = ForecastMatrix::read_csv(p).with_context(|| format!("reading forecast {}", p.display()))?;
        out.push((name, f));
    }
    Ok(out)
}

/// Dates of `forecast` whose naive benchmark can be built from `actuals`.
fn naive_covered(actuals: &ForecastMatrix, forecast: &ForecastMatrix, kind: NaiveKind) -> Vec<NaiveDate> {
    forecast
        .dates()
        .iter()
        .copied()
        .filter(|&d| actuals.position(d - Duration::days(kind.lag_for(d))).is_some())
        .collect()
}

/// Scores each model on its own dates, dropping leading days without a
/// naive benchmark (only possible when the actuals carry no history).
fn evaluate_all(
    models: &[(String, ForecastMatrix)],
    actuals: &ForecastMatrix,
    naive: NaiveKind,
) -> anyhow::Result<EvaluationReport> {
    let mut report = EvaluationReport {
        naive,
        ..Default::default()
    };
    for (name, forecast) in models {
        let covered = naive_covered(actuals, forecast, naive);
        if covered.is_empty() {
            bail!(EpfError::Metric(format!(
                "the actuals hold no history for a {} benchmark of {name}",
                naive.name()
            )));
        }
        let forecast = if covered.len() < forecast.n_days() {
            warn!(
                model = %name,
                dropped = forecast.n_days() - covered.len(),
                "leading days without a naive benchmark are left out of every metric"
            );
            forecast.select(&covered)?
        } else {
            forecast.clone()
        };
        let first = forecast.dates()[0];
        let in_sample: Vec<f64> = actuals
            .dates()
            .iter()
            .enumerate()
            .filter(|(_, &d)| d < first)
            .flat_map(|(i, _)| actuals.row(i).to_vec())
            .collect();
        let ctx = MetricContext {
            naive,
            history: Some(actuals.clone()),
            in_sample: (in_sample.len() >= 2 * epf::HOURS).then_some(in_sample),
            ..Default::default()
        };
        let one = evaluate_models(&[(name.clone(), forecast)], actuals, &ctx)?;
        report.rows.extend(one.rows);
        report.mape_excluded.extend(one.mape_excluded);
    }
    Ok(report)
}

fn print_report(report: &EvaluationReport) {
    let metrics: Vec<&str> = Metric::ALL
        .iter()
        .map(|m| m.name())
        .filter(|m| report.rows.iter().any(|r| r.metric == *m))
        .collect();
    let mut models: Vec<&str> = Vec::new();
    for r in &report.rows {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let width = models.iter().map(|m| m.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<width$}", "model");
    for m in &metrics {
        let _ = write!(out, " {m:>9}");
    }
    out.push('\n');
    for model in models {
        let _ = write!(out, "{model:<width$}");
        for m in &metrics {
            match report.rows.iter().find(|r| r.model == model && r.metric == *m) {
                Some(r) => {
                    let _ = write!(out, " {:>9.4}", r.value);
                }
                None => {
                    let _ = write!(out, " {:>9}", "-");
                }
            }
        }
        out.push('\n');
    }
    print!("{out}");
}

pub fn evaluate(
    actuals: &Path,
    forecasts: &[PathBuf],
    naive: NaiveKind,
    output: &Path,
    json: Option<&Path>,
) -> anyhow::Result<()> {
    let actuals = load_actuals(actuals)?;
    let models = load_forecasts(forecasts)?;
    let report = evaluate_all(&models, &actuals, naive)?;
    for (model, n) in &report.mape_excluded {
        if *n > 0 {
            warn!(model = %model, cells = n, "zero actual prices left out of MAPE");
        }
    }
    report.write_csv(output)?;
    if let Some(p) = json {
        report.write_json(p)?;
    }
    print_report(&report);
    Ok(())
}

fn print_matrix(m: &PValueMatrix) {
    let width = m.names.iter().map(|n| n.len()).max().unwrap_or(1);
    let mut out = format!("{:width$}", "");
    for n in &m.names {
        let _ = write!(out, " {n:>width$}");
    }
    out.push('\n');
    for (i, row) in m.values.iter().enumerate() {
        let _ = write!(out, "{:<width$}", m.names[i]);
        for v in row {
            match v {
                Some(p) => {
                    let _ = write!(out, " {p:>width$.4}");
                }
                None => {
                    let _ = write!(out, " {:>width$}", "");
                }
            }
        }
        out.push('\n');
    }
    print!("{out}");
}

pub fn test(
    actuals: &Path,
    forecasts: &[PathBuf],
    kind: TestKind,
    norm: Norm,
    output: &Path,
    title: Option<&str>,
) -> anyhow::Result<()> {
    if forecasts.len() < 2 {
        bail!(EpfError::Config("a test needs at least two forecast files".into()));
    }
    let actuals = load_actuals(actuals)?;
    let models = load_forecasts(forecasts)?;
    let matrix = pairwise_matrix(&models, &actuals, kind, norm)?;
    let k = matrix.names.len();
    let blank = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && matrix.values[i][j].is_none())
        .count();
    if blank == k * (k - 1) {
        warn!("every cell is blank: the loss differentials are degenerate (identical forecasts?)");
    } else if blank > 0 {
        warn!(cells = blank, "blank cells where the test statistic is undefined");
    }
    let default_title = match kind {
        TestKind::DieboldMariano => format!("DM test, L{} norm", norm.p()),
        TestKind::GiacominiWhite { q } => format!("GW test (q = {q}), L{} norm", norm.p()),
    };
    write_chessboard_svg(&matrix, title.unwrap_or(&default_title), output)?;
    print_matrix(&matrix);
    println!("wrote {} and {}", output.display(), output.with_extension("csv").display());
    Ok(())
}

fn is_forecast_file(path: &Path) -> bool {
    let Ok(file) = File::open(path) else {
        return false;
    };
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first).is_ok() && first.starts_with("date,h1,")
}

/// Simple horizontal bar chart of one metric per model.
fn bar_svg(metric: &str, bars: &[(String, f64)]) -> String {
    let label_w = 12 + 7 * bars.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
    let max = bars.iter().map(|(_, v)| *v).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let (bar_h, plot_w) = (22, 400.0);
    let height = 40 + bars.len() * bar_h + 10;
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{label_w}" y="20" font-size="14">{metric}</text>
"#,
        label_w + plot_w as usize + 80
    );
    for (i, (name, v)) in bars.iter().enumerate() {
        let y = 34 + i * bar_h;
        let w = (v / max * plot_w).max(0.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{name}</text>"#, label_w - 6, y + 14);
        let _ = writeln!(svg, r##"<rect x="{label_w}" y="{y}" width="{w:.1}" height="{}" fill="#4a78b5"/>"##, bar_h - 4);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{}">{v:.4}</text>"#, label_w as f64 + w + 4.0, y + 14);
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn report(dir: &Path) -> anyhow::Result<()> {
    let manifest = run_dir::read_manifest(dir)?
        .ok_or_else(|| EpfError::Config(format!("{} is not a run directory (no run.json)", dir.display())))?;
    let raw = RawConfig::load(&dir.join(run_dir::CONFIG_FILE))?;
    let naive: NaiveKind = raw.get("naive").unwrap_or("lag7").parse()?;
    let dataset = PathBuf::from(manifest["dataset"].as_str().unwrap_or_default());
    let recorded = manifest["dataset_hash"].as_str().unwrap_or_default();
    let actual = content_hash(&dataset)?;
    if actual != recorded {
        bail!(EpfError::Checksum {
            path: dataset,
            expected: recorded.to_string(),
            actual,
        });
    }
    let actuals = load_actuals(&dataset)?;

    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|source| EpfError::Io {
            path: dir.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv") && is_forecast_file(p))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!(EpfError::Config(format!("no forecast files in {}", dir.display())));
    }
    let mut models = load_forecasts(&files)?;
    // Compare every model over the dates they all cover.
    let mut common: Vec<NaiveDate> = models[0].1.dates().to_vec();
    for (_, f) in &models[1..] {
        common.retain(|d| f.position(*d).is_some());
    }
    if common.is_empty() {
        bail!(EpfError::Shape("the forecast files share no dates".into()));
    }
    for (name, f) in models.iter_mut() {
        if f.n_days() != common.len() {
            warn!(model = %name, days = f.n_days(), common = common.len(), "restricted to the dates all models cover");
            *f = f.select(&common)?;
        }
    }
    let report = evaluate_all(&models, &actuals, naive)?;

    let metrics: Vec<Metric> = Metric::ALL
        .into_iter()
        .filter(|m| report.rows.iter().any(|r| r.metric == m.name()))
        .collect();
    let mut csv = String::from("model");
    for m in &metrics {
        let _ = write!(csv, ",{}", m.name());
    }
    csv.push_str(",seconds_per_day\n");
    let mut bars = Vec::new();
    for (name, _) in &models {
        csv.push_str(name);
        for &m in &metrics {
            let _ = write!(csv, ",{}", report.value(name, m).unwrap_or(f64::NAN));
        }
        let timing = dir.join(format!("{name}.timing.csv"));
        let seconds = if timing.exists() {
            let t = read_timing_log(&timing)?;
            (!t.is_empty()).then(|| t.iter().map(|d| d.seconds).sum::<f64>() / t.len() as f64)
        } else {
            None
        };
        match seconds {
            Some(s) => {
                let _ = writeln!(csv, ",{s}");
            }
            None => csv.push_str(",\n"),
        }
        bars.push((name.clone(), report.value(name, Metric::Rmae).unwrap_or(f64::NAN)));
    }
    let summary = dir.join("summary.csv");
    fs::write(&summary, &csv).map_err(|source| EpfError::Io {
        path: summary.clone(),
        source,
    })?;
    let chart = dir.join("summary_rMAE.svg");
    fs::write(&chart, bar_svg("rMAE", &bars)).map_err(|source| EpfError::Io {
        path: chart.clone(),
        source,
    })?;
    println!("{} days, {} models, naive benchmark {naive}", common.len(), models.len());
    print_report(&report);
    println!("wrote {} and {}", summary.display(), chart.display());
    Ok(())
}
