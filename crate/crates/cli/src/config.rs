//! Experiment configuration: a line-based `key = value` file whose keys can
//! each be overridden by a command flag of the same name.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use epf::data::{Market, MarketDataset, LEAR_WINDOWS, TEST_PERIOD_DAYS};
use epf::dnn::SplitMode;
use epf::metrics::NaiveKind;
use epf::{EpfError, Result};

/// Every recognised key, in the order the resolved file lists them.
pub const KEYS: [&str; 20] = [
    "market",
    "dataset",
    "model",
    "windows",
    "allow_any_window",
    "test_start",
    "test_end",
    "seeds",
    "hyperopt_budget",
    "hyperparams",
    "output",
    "naive",
    "max_epochs",
    "patience",
    "batch_size",
    "total_weeks",
    "validation_weeks",
    "split_mode",
    "cache_dir",
    "hyperopt_startup",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Lear,
    Dnn,
    LearEnsemble,
    DnnEnsemble,
    Naive,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lear => "lear",
            ModelKind::Dnn => "dnn",
            ModelKind::LearEnsemble => "lear_ensemble",
            ModelKind::DnnEnsemble => "dnn_ensemble",
            ModelKind::Naive => "naive",
        }
    }

    fn is_lear(self) -> bool {
        matches!(self, ModelKind::Lear | ModelKind::LearEnsemble)
    }
}

impl FromStr for ModelKind {
    type Err = EpfError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lear" => ModelKind::Lear,
            "dnn" => ModelKind::Dnn,
            "lear_ensemble" => ModelKind::LearEnsemble,
            "dnn_ensemble" => ModelKind::DnnEnsemble,
            "naive" => ModelKind::Naive,
            _ => {
                return Err(EpfError::Config(format!(
                    "unknown model '{s}', expected lear, dnn, lear_ensemble, dnn_ensemble or naive"
                )))
            }
        })
    }
}

/// Raw key/value pairs before defaults are applied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig(BTreeMap<String, String>);

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| EpfError::Config(format!(
                "config line {}: expected key = value, found '{line}'",
                i + 1
            )))?;
            let key = k.trim().replace('-', "_");
            check_key(&key)?;
            if map.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(EpfError::Config(format!("config line {}: duplicate key '{key}'", i + 1)));
            }
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EpfError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Flag values win over file values.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        check_key(key)?;
        self.0.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.contains(&key) {
        Ok(())
    } else {
        Err(EpfError::Config(format!("unknown config key '{key}'")))
    }
}

/// Where the DNN hyperparameters come from.
#[derive(Debug, Clone, PartialEq)]
pub enum HyperparamSource {
    /// Study results in the run directory if present, else the defaults.
    Auto,
    Files(Vec<PathBuf>),
}

/// A fully resolved experiment: every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub market: String,
    pub dataset: PathBuf,
    pub model: ModelKind,
    pub windows: Vec<usize>,
    pub allow_any_window: bool,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
    pub seeds: Vec<u64>,
    pub hyperopt_budget: usize,
    pub hyperopt_startup: usize,
    pub hyperparams: HyperparamSource,
    pub output: PathBuf,
    pub naive: NaiveKind,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub total_weeks: usize,
    pub validation_weeks: usize,
    pub split_mode: SplitMode,
    pub cache_dir: PathBuf,
}

fn parse<T: FromStr>(raw: &RawConfig, key: &str) -> Result<Option<T>> {
    raw.get(key)
        .map(|v| {
            v.parse()
                .map_err(|_| EpfError::Config(format!("invalid value '{v}' for {key}")))
        })
        .transpose()
}

fn parse_list<T: FromStr>(raw: &RawConfig, key: &str) -> Result<Option<Vec<T>>> {
    raw.get(key)
        .map(|v| {
            v.split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| EpfError::Config(format!("invalid entry '{}' in {key}", x.trim())))
                })
                .collect()
        })
        .transpose()
}

fn parse_date(raw: &RawConfig, key: &str) -> Result<Option<NaiveDate>> {
    raw.get(key)
        .map(|v| {
            NaiveDate::parse_from_str(v, "%Y-%m-%d")
                .map_err(|_| EpfError::Config(format!("{key} must be an ISO date, got '{v}'")))
        })
        .transpose()
}

fn split_mode_name(mode: SplitMode) -> &'static str {
    match mode {
        SplitMode::ChronologicalTail => "chronological_tail",
        SplitMode::RandomWeeks => "random_weeks",
    }
}

/// Settings that can be resolved before the dataset is read.
#[derive(Debug)]
pub struct PartialConfig {
    raw: RawConfig,
    pub market: String,
    pub dataset: PathBuf,
    pub cache_dir: PathBuf,
}

impl PartialConfig {
    pub fn new(raw: RawConfig) -> Result<Self> {
        let cache_dir = epf::data::resolve_cache_dir(raw.get("cache_dir").map(Path::new));
        let (market, dataset) = match (raw.get("market"), raw.get("dataset")) {
            (Some(m), Some(d)) => (m.to_string(), PathBuf::from(d)),
            (Some(m), None) => {
                let id = Market::from_str(m).map(Market::id).unwrap_or(m);
                (id.to_string(), cache_dir.join(format!("{id}.csv")))
            }
            (None, Some(d)) => {
                let stem = Path::new(d)
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| EpfError::Config(format!("cannot derive a market id from '{d}'")))?;
                (stem.to_string(), PathBuf::from(d))
            }
            (None, None) => return Err(EpfError::Config("either market or dataset must be given".into())),
        };
        Ok(Self {
            raw,
            market,
            dataset,
            cache_dir,
        })
    }

    /// Fills in the defaults that depend on the dataset and checks the result.
    pub fn resolve(self, dataset: &MarketDataset) -> Result<ExperimentConfig> {
        let raw = &self.raw;
        let model: ModelKind = match raw.get("model") {
            Some(m) => m.parse()?,
            None => ModelKind::Lear,
        };
        let allow_any_window = parse::<bool>(raw, "allow_any_window")?.unwrap_or(false);
        let windows = match parse_list::<usize>(raw, "windows")? {
            Some(w) => w,
            None if model == ModelKind::LearEnsemble => LEAR_WINDOWS.to_vec(),
            None => vec![LEAR_WINDOWS[0]],
        };
        if model.is_lear() {
            if windows.is_empty() || (model == ModelKind::Lear && windows.len() != 1) {
                return Err(EpfError::Config(format!(
                    "model {} needs {} calibration window(s), got {}",
                    model.name(),
                    if model == ModelKind::Lear { "exactly one" } else { "at least one" },
                    windows.len()
                )));
            }
            if let Some(w) = windows.iter().find(|w| !LEAR_WINDOWS.contains(w)) {
                if !allow_any_window {
                    return Err(EpfError::Config(format!(
                        "window {w} is not one of {LEAR_WINDOWS:?}; set allow_any_window = true to use it"
                    )));
                }
            }
        }

        let (first, last) = match (dataset.first_date(), dataset.last_date()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(EpfError::Schema("dataset is empty".into())),
        };
        let test_start = match parse_date(raw, "test_start")? {
            Some(d) => d,
            None => match Market::from_str(&self.market) {
                Ok(m) if dataset.index_of(m.test_start()).is_some() => m.test_start(),
                _ => {
                    let i = dataset.len().checked_sub(TEST_PERIOD_DAYS).filter(|&i| i > 0).ok_or_else(|| {
                        EpfError::Config(format!(
                            "dataset has {} days, too few for the default {TEST_PERIOD_DAYS}-day test period; set test_start",
                            dataset.len()
                        ))
                    })?;
                    dataset.dates()[i]
                }
            },
        };
        let test_end = parse_date(raw, "test_end")?.unwrap_or(last);
        if test_start <= first || test_end > last || test_end < test_start {
            return Err(EpfError::Config(format!(
                "test period {test_start}..={test_end} must lie within the dataset span {first}..={last} and leave history before it"
            )));
        }

        let seeds = match parse_list::<u64>(raw, "seeds")? {
            Some(s) if !s.is_empty() => s,
            Some(_) => return Err(EpfError::Config("seeds must not be empty".into())),
            None if model == ModelKind::DnnEnsemble => vec![1, 2, 3, 4],
            None => vec![1],
        };
        let hyperparams = match raw.get("hyperparams") {
            None | Some("auto") => HyperparamSource::Auto,
            Some(v) => HyperparamSource::Files(v.split(',').map(|p| PathBuf::from(p.trim())).collect()),
        };
        let split_mode = match raw.get("split_mode") {
            None | Some("random_weeks") => SplitMode::RandomWeeks,
            Some("chronological_tail") => SplitMode::ChronologicalTail,
            Some(other) => {
                return Err(EpfError::Config(format!(
                    "split_mode must be random_weeks or chronological_tail, got '{other}'"
                )))
            }
        };
        let output = raw
            .get("output")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}_{}", self.market, model.name())));
        let defaults = epf::dnn::TrainOptions::default();
        let shape = epf::dnn::SplitShape::default();
        let cfg = ExperimentConfig {
            market: self.market,
            dataset: self.dataset,
            model,
            windows,
            allow_any_window,
            test_start,
            test_end,
            seeds,
            hyperopt_budget: parse(raw, "hyperopt_budget")?.unwrap_or(1500),
            hyperopt_startup: parse(raw, "hyperopt_startup")?.unwrap_or(epf::hyperopt::TpeOptions::default().n_startup),
            hyperparams,
            output,
            naive: parse(raw, "naive")?.unwrap_or_default(),
            max_epochs: parse(raw, "max_epochs")?.unwrap_or(defaults.max_epochs),
            patience: parse(raw, "patience")?.unwrap_or(defaults.patience),
            batch_size: parse(raw, "batch_size")?.unwrap_or(defaults.batch_size),
            total_weeks: parse(raw, "total_weeks")?.unwrap_or(shape.total_weeks),
            validation_weeks: parse(raw, "validation_weeks")?.unwrap_or(shape.validation_weeks),
            split_mode,
            cache_dir: self.cache_dir,
        };
        if cfg.max_epochs == 0 || cfg.batch_size == 0 || cfg.hyperopt_budget == 0 {
            return Err(EpfError::Config("max_epochs, batch_size and hyperopt_budget must be positive".into()));
        }
        if cfg.validation_weeks == 0 || cfg.validation_weeks >= cfg.total_weeks {
            return Err(EpfError::Config("validation_weeks must be positive and below total_weeks".into()));
        }
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn test_days(&self) -> usize {
        (self.test_end - self.test_start).num_days() as usize + 1
    }

    pub fn shape(&self) -> epf::dnn::SplitShape {
        epf::dnn::SplitShape {
            total_weeks: self.total_weeks,
            validation_weeks: self.validation_weeks,
        }
    }

    pub fn train_options(&self) -> epf::dnn::TrainOptions {
        epf::dnn::TrainOptions {
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            ..Default::default()
        }
    }

    fn join<T: fmt::Display>(items: &[T]) -> String {
        items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
    }

    /// The resolved configuration as `key = value` lines, in [`KEYS`] order.
    pub fn render(&self) -> String {
        let mut out = String::from("# resolved experiment configuration\n");
        for key in KEYS {
            let value = match key {
                "market" => self.market.clone(),
                "dataset" => self.dataset.display().to_string(),
                "model" => self.model.name().to_string(),
                "windows" => Self::join(&self.windows),
                "allow_any_window" => self.allow_any_window.to_string(),
                "test_start" => self.test_start.to_string(),
                "test_end" => self.test_end.to_string(),
                "seeds" => Self::join(&self.seeds),
                "hyperopt_budget" => self.hyperopt_budget.to_string(),
                "hyperopt_startup" => self.hyperopt_startup.to_string(),
                "hyperparams" => match &self.hyperparams {
                    HyperparamSource::Auto => "auto".to_string(),
                    HyperparamSource::Files(f) => {
                        f.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")
                    }
                },
                "output" => self.output.display().to_string(),
                "naive" => self.naive.name().to_string(),
                "max_epochs" => self.max_epochs.to_string(),
                "patience" => self.patience.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "total_weeks" => self.total_weeks.to_string(),
                "validation_weeks" => self.validation_weeks.to_string(),
                "split_mode" => split_mode_name(self.split_mode).to_string(),
                "cache_dir" => self.cache_dir.display().to_string(),
                _ => unreachable!("every key is rendered"),
            };
            out += &format!("{key} = {value}\n");
        }
        out
    }
}
