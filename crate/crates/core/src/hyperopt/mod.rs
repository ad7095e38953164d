//! Joint feature and hyperparameter search for the DNN.
//!
//! The 11 feature flags and the network hyperparameters form one search
//! space explored with a tree-structured Parzen estimator. Each trial trains a
//! single network on the window before the test period and is scored by its
//! MAE on the final validation weeks. This happens once, before any backtest.

mod tpe;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::info;

pub use tpe::{check_space, sample_prior, tpe_suggest, Dimension, TpeOptions};

use crate::data::{InformationSet, MarketDataset};
use crate::dnn::{day_seed, fit_on_split, Activation, DnnHyperparams, InitKind, SplitMode, SplitShape, TrainOptions, TrainSplit};
use crate::features::FeatureMask;
use crate::transform::ScalerKind;
use crate::{EpfError, Result};

const N_FLAGS: usize = 11;

/// Bounds and enumerations of every searchable dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub n1: (usize, usize),
    pub n2: (usize, usize),
    pub activations: Vec<Activation>,
    pub scalers: Vec<ScalerKind>,
    pub inits: Vec<InitKind>,
    /// Log-uniform.
    pub learning_rate: (f64, f64),
    /// Log-uniform.
    pub l1: (f64, f64),
    pub dropout: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            n1: (50, 500),
            n2: (25, 400),
            activations: Activation::SEARCHABLE.to_vec(),
            scalers: ScalerKind::ALL.to_vec(),
            inits: InitKind::SEARCHABLE.to_vec(),
            learning_rate: (1e-4, 1e-1),
            l1: (1e-5, 1e-1),
            dropout: (0.0, 0.5),
        }
    }
}

// Point layout: 11 flags, n1, n2, activation, scaler, init, batch norm,
// learning rate, l1, dropout.
const I_N1: usize = N_FLAGS;
const I_N2: usize = N_FLAGS + 1;
const I_ACT: usize = N_FLAGS + 2;
const I_SCALER: usize = N_FLAGS + 3;
const I_INIT: usize = N_FLAGS + 4;
const I_BN: usize = N_FLAGS + 5;
const I_LR: usize = N_FLAGS + 6;
const I_L1: usize = N_FLAGS + 7;
const I_DROPOUT: usize = N_FLAGS + 8;

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(EpfError::Config(format!("search space: invalid {what}")));
        if self.n1.0 == 0 || self.n1.0 > self.n1.1 {
            return bad("n1 range");
        }
        if self.n2.0 == 0 || self.n2.0 > self.n2.1 {
            return bad("n2 range");
        }
        if self.activations.is_empty() || self.scalers.is_empty() || self.inits.is_empty() {
            return bad("empty enumeration");
        }
        let (lo, hi) = self.learning_rate;
        if !(1e-5 <= lo && lo < hi && hi <= 1e-1) {
            return bad("learning rate range (must lie in [1e-5, 1e-1])");
        }
        let (lo, hi) = self.l1;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return bad("l1 range");
        }
        let (lo, hi) = self.dropout;
        if !(0.0 <= lo && lo < hi && hi <= 0.5) {
            return bad("dropout range (must lie in [0, 0.5])");
        }
        Ok(())
    }

    pub fn dimensions(&self) -> Vec<Dimension> {
        let mut dims = vec![Dimension::Categorical { n: 2 }; N_FLAGS];
        dims.extend([
            Dimension::Integer {
                low: self.n1.0 as i64,
                high: self.n1.1 as i64,
            },
            Dimension::Integer {
                low: self.n2.0 as i64,
                high: self.n2.1 as i64,
            },
            Dimension::Categorical {
                n: self.activations.len(),
            },
            Dimension::Categorical { n: self.scalers.len() },
            Dimension::Categorical { n: self.inits.len() },
            Dimension::Categorical { n: 2 },
            Dimension::LogUniform {
                low: self.learning_rate.0,
                high: self.learning_rate.1,
            },
            Dimension::LogUniform {
                low: self.l1.0,
                high: self.l1.1,
            },
            Dimension::Uniform {
                low: self.dropout.0,
                high: self.dropout.1,
            },
        ]);
        dims
    }

    pub fn decode(&self, point: &[f64]) -> Result<DnnHyperparams> {
        let dims = self.dimensions();
        if point.len() != dims.len() || dims.iter().zip(point).any(|(d, &x)| !d.contains(x)) {
            return Err(EpfError::Config("point lies outside the search space".into()));
        }
        let mut flags = [false; N_FLAGS];
        flags.iter_mut().zip(point).for_each(|(f, &v)| *f = v == 1.0);
        Ok(DnnHyperparams {
            n1: point[I_N1] as usize,
            n2: point[I_N2] as usize,
            activation: self.activations[point[I_ACT] as usize],
            dropout: point[I_DROPOUT],
            learning_rate: point[I_LR],
            batch_norm: point[I_BN] == 1.0,
            scaler: self.scalers[point[I_SCALER] as usize],
            init: self.inits[point[I_INIT] as usize],
            l1: point[I_L1],
            mask: FeatureMask::from_flags(flags),
        })
    }

    pub fn encode(&self, hp: &DnnHyperparams) -> Result<Vec<f64>> {
        fn index<T: PartialEq + std::fmt::Debug>(list: &[T], v: &T) -> Result<f64> {
            list.iter()
                .position(|x| x == v)
                .map(|i| i as f64)
                .ok_or_else(|| EpfError::Config(format!("{v:?} is not part of the search space")))
        }
        let mut point: Vec<f64> = hp.mask.flags().iter().map(|&f| f64::from(u8::from(f))).collect();
        point.extend([
            hp.n1 as f64,
            hp.n2 as f64,
            index(&self.activations, &hp.activation)?,
            index(&self.scalers, &hp.scaler)?,
            index(&self.inits, &hp.init)?,
            f64::from(u8::from(hp.batch_norm)),
            hp.learning_rate,
            hp.l1,
            hp.dropout,
        ]);
        if self.dimensions().iter().zip(&point).any(|(d, &x)| !d.contains(x)) {
            return Err(EpfError::Config("configuration lies outside the search space".into()));
        }
        Ok(point)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Complete,
    /// Training diverged.
    Failed,
    /// Rejected before training (e.g. an all-off feature mask).
    Rejected,
}

/// Non-finite objectives are stored as JSON `null`.
mod objective_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub number: usize,
    pub seed: u64,
    pub config: DnnHyperparams,
    /// Validation MAE in price units; infinite unless complete.
    #[serde(with = "objective_serde")]
    pub objective: f64,
    pub status: TrialStatus,
    pub best_epoch: Option<usize>,
    pub seconds: f64,
}

/// Outcome of training one configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub objective: f64,
    pub status: TrialStatus,
    pub best_epoch: Option<usize>,
}

/// Validation split used during the search: the final `validation_weeks`
/// before `test_start`, so validation ends the day before the test period.
pub fn search_split(dataset: &MarketDataset, test_start: NaiveDate, shape: SplitShape, mask: &FeatureMask) -> Result<TrainSplit> {
    let target = dataset.require_index(test_start)?;
    // The rng is unused in chronological mode.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    TrainSplit::new(target, shape, SplitMode::ChronologicalTail, mask.max_lag(), &mut rng)
}

/// Trains one network for `config` and scores it on the validation weeks.
///
/// Invalid configurations are rejected with an error before any training;
/// divergence is not an error but a failed trial with infinite objective.
pub fn evaluate_trial(
    config: &DnnHyperparams,
    dataset: &MarketDataset,
    test_start: NaiveDate,
    shape: SplitShape,
    train: &TrainOptions,
    seed: u64,
) -> Result<TrialOutcome> {
    config.validate()?;
    let split = search_split(dataset, test_start, shape, &config.mask)?;
    let info = InformationSet::at_date(dataset, test_start)?;
    match fit_on_split(&info, &split, config, train, seed) {
        Ok((_, history)) if history.best_val_score.is_finite() => Ok(TrialOutcome {
            objective: history.best_val_score,
            status: TrialStatus::Complete,
            best_epoch: Some(history.best_epoch),
        }),
        Ok(_) | Err(EpfError::Divergence { .. }) => Ok(TrialOutcome {
            objective: f64::INFINITY,
            status: TrialStatus::Failed,
            best_epoch: None,
        }),
        Err(e) => Err(e),
    }
}

/// MAE of the weekly naive forecast (prices of seven days earlier) on the
/// search validation window; the yardstick a useful configuration must beat.
pub fn naive_week_validation_mae(dataset: &MarketDataset, test_start: NaiveDate, shape: SplitShape) -> Result<f64> {
    let split = search_split(dataset, test_start, shape, &FeatureMask::full())?;
    let prices = dataset.prices();
    let mut sum = 0.0;
    for &d in &split.val_days {
        sum += (&prices.row(d) - &prices.row(d - 7)).mapv(f64::abs).sum();
    }
    Ok(sum / (split.val_days.len() * prices.ncols()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    /// Total number of trials T.
    pub budget: usize,
    pub seed: u64,
    pub space: SearchSpace,
    pub tpe: TpeOptions,
    pub shape: SplitShape,
    pub train: TrainOptions,
}

impl StudyConfig {
    pub fn new(budget: usize, seed: u64) -> Self {
        Self {
            budget,
            seed,
            space: SearchSpace::default(),
            tpe: TpeOptions::default(),
            shape: SplitShape::default(),
            train: TrainOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub trials: Vec<Trial>,
    pub budget: usize,
    /// Trials evaluated by this call (the rest came from the log).
    pub evaluated: usize,
}

impl Study {
    /// Arg-min objective over completed trials (earliest on ties).
    pub fn best(&self) -> Option<&Trial> {
        self.trials
            .iter()
            .filter(|t| t.status == TrialStatus::Complete)
            .min_by(|a, b| a.objective.total_cmp(&b.objective).then(a.number.cmp(&b.number)))
    }

    /// Running minimum of the objective after each trial.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.trials
            .iter()
            .scan(f64::INFINITY, |m, t| {
                *m = m.min(t.objective);
                Some(*m)
            })
            .collect()
    }

    /// Writes the best configuration as JSON for the dnn/ensemble stages.
    pub fn export_best(&self, path: impl AsRef<Path>) -> Result<DnnHyperparams> {
        let best = self
            .best()
            .ok_or_else(|| EpfError::Config("study has no completed trial".into()))?;
        best.config.save_json(path)?;
        Ok(best.config)
    }
}

/// Reads a JSON-lines trial log. A torn final line (from an interrupted
/// write) is ignored; any other malformed line is an error.
pub fn read_trial_log(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    let path = path.as_ref();
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(EpfError::io(path, e)),
    };
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut trials = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<Trial>(line) {
            Ok(t) => trials.push(t),
            Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => break,
            Err(e) => {
                return Err(EpfError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    for (i, t) in trials.iter().enumerate() {
        if t.number != i {
            return Err(EpfError::Parse {
                line: i + 1,
                message: format!("trial {} out of sequence", t.number),
            });
        }
    }
    Ok(trials)
}

fn append_trial(path: &Path, trial: &Trial) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| EpfError::io(path, e))?;
    let line = serde_json::to_string(trial)? + "\n";
    file.write_all(line.as_bytes()).map_err(|e| EpfError::io(path, e))?;
    file.sync_data().map_err(|e| EpfError::io(path, e))
}

/// Rewrites the log without a torn tail so appends start on a fresh line.
fn repair_log(path: &Path, trials: &[Trial]) -> Result<()> {
    let mut text = String::new();
    for t in trials {
        text += &serde_json::to_string(t)?;
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| EpfError::io(path, e))
}

/// Runs (or resumes) a study of `config.budget` trials before `test_start`.
///
/// Every trial is appended to `log` as soon as it finishes; trials already in
/// the log are reused, so an interrupted study picks up where it stopped and
/// yields the same trials as an uninterrupted one. Suggestions and training
/// seeds depend only on the base seed and the trial number.
pub fn run_study(dataset: &MarketDataset, test_start: NaiveDate, config: &StudyConfig, log: Option<&Path>) -> Result<Study> {
    if config.budget == 0 {
        return Err(EpfError::Config("study budget must be at least 1".into()));
    }
    config.space.validate()?;
    let dims = config.space.dimensions();
    let mut trials = match log {
        Some(path) => {
            let trials = read_trial_log(path)?;
            if path.exists() {
                repair_log(path, &trials)?;
            }
            trials
        }
        None => Vec::new(),
    };
    trials.truncate(config.budget);
    let mut history: Vec<(Vec<f64>, f64)> = trials
        .iter()
        .map(|t| Ok((config.space.encode(&t.config)?, t.objective)))
        .collect::<Result<_>>()?;
    let resumed = trials.len();
    if resumed > 0 {
        info!(resumed, "resuming study from trial log");
    }

    for number in resumed..config.budget {
        let mut rng = ChaCha8Rng::seed_from_u64(day_seed(config.seed ^ 0x5450_4553, number));
        let point = tpe_suggest(&dims, &history, &config.tpe, &mut rng);
        let hp = config.space.decode(&point)?;
        let seed = day_seed(config.seed, number);
        let start = Instant::now();
        let outcome = if hp.mask.validate().is_err() {
            TrialOutcome {
                objective: f64::INFINITY,
                status: TrialStatus::Rejected,
                best_epoch: None,
            }
        } else {
            evaluate_trial(&hp, dataset, test_start, config.shape, &config.train, seed)?
        };
        let trial = Trial {
            number,
            seed,
            config: hp,
            objective: outcome.objective,
            status: outcome.status,
            best_epoch: outcome.best_epoch,
            seconds: start.elapsed().as_secs_f64(),
        };
        info!(number, objective = trial.objective, status = ?trial.status, "trial finished");
        if let Some(path) = log {
            append_trial(path, &trial)?;
        }
        history.push((point, trial.objective));
        trials.push(trial);
    }
    Ok(Study {
        trials,
        budget: config.budget,
        evaluated: config.budget - resumed,
    })
}
