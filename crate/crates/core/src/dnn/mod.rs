//! Multivariate DNN: one network maps a day's inputs to all 24 prices.
//!
//! Every test day the network is retrained from scratch on the preceding
//! 208 weeks, of which 42 weeks (chosen at random, whole weeks) serve for
//! early stopping.

mod network;
mod train;

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use network::{
    Activation, BatchStats, DropoutMasks, InitKind, LayerSlots, Network, BN_EPSILON, BN_MOMENTUM, LEAKY_SLOPE,
};
pub use train::{scaled_mae, train, Adam, AdamOptions, EpochRecord, TrainData, TrainHistory, TrainOptions};

use crate::backtest::{run_backtest, BacktestOptions, BacktestOutput, DailyForecaster};
use crate::data::{InformationSet, MarketDataset, TestPeriod};
use crate::features::{build_dnn_design, dnn_input, FeatureMask};
use crate::transform::{DnnScaler, ScalerKind};
use crate::{EpfError, Result, HOURS};

/// The searchable part of the DNN configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DnnHyperparams {
    pub n1: usize,
    pub n2: usize,
    pub activation: Activation,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_norm: bool,
    pub scaler: ScalerKind,
    pub init: InitKind,
    pub l1: f64,
    pub mask: FeatureMask,
}

impl Default for DnnHyperparams {
    fn default() -> Self {
        Self {
            n1: 200,
            n2: 100,
            activation: Activation::Relu,
            dropout: 0.1,
            learning_rate: 1e-3,
            batch_norm: false,
            scaler: ScalerKind::MedianMad,
            init: InitKind::GlorotUniform,
            l1: 1e-5,
            mask: FeatureMask::full(),
        }
    }
}

impl DnnHyperparams {
    pub fn validate(&self) -> Result<()> {
        self.mask.validate()?;
        if self.n1 == 0 || self.n2 == 0 {
            return Err(EpfError::Config("hidden layers need at least one neuron".into()));
        }
        if !(0.0..=0.5).contains(&self.dropout) {
            return Err(EpfError::Config(format!("dropout {} outside [0, 0.5]", self.dropout)));
        }
        if !(1e-5..=1e-1).contains(&self.learning_rate) {
            return Err(EpfError::Config(format!("learning rate {} outside [1e-5, 1e-1]", self.learning_rate)));
        }
        if !(self.l1 >= 0.0 && self.l1.is_finite()) {
            return Err(EpfError::Config(format!("l1 coefficient {} must be >= 0", self.l1)));
        }
        Ok(())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| EpfError::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| EpfError::io(path, e))?;
        let hp: Self = serde_json::from_str(&text)?;
        hp.validate()?;
        Ok(hp)
    }
}

/// How the validation weeks are picked from the calibration window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// The final weeks before the target day.
    ChronologicalTail,
    /// Whole weeks drawn uniformly without replacement.
    RandomWeeks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitShape {
    pub total_weeks: usize,
    pub validation_weeks: usize,
}

impl Default for SplitShape {
    fn default() -> Self {
        Self {
            total_weeks: 208,
            validation_weeks: 42,
        }
    }
}

/// Day indices for training and validation, both drawn from the
/// `total_weeks` weeks immediately before a target day.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainSplit {
    pub train_days: Vec<usize>,
    pub val_days: Vec<usize>,
    pub mode: SplitMode,
}

impl TrainSplit {
    /// Splits the window before `target`. Days before `first_usable` (whose
    /// lags fall outside the dataset) are dropped from both sets.
    pub fn new(
        target: usize,
        shape: SplitShape,
        mode: SplitMode,
        first_usable: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if shape.validation_weeks == 0 || shape.validation_weeks >= shape.total_weeks {
            return Err(EpfError::Split(format!(
                "validation weeks {} must be in 1..{}",
                shape.validation_weeks, shape.total_weeks
            )));
        }
        let span = shape.total_weeks * 7;
        if target < span {
            return Err(EpfError::Split(format!(
                "{span} days of history needed before day index {target}"
            )));
        }
        let start = target - span;
        let val_weeks: Vec<usize> = match mode {
            SplitMode::ChronologicalTail => (shape.total_weeks - shape.validation_weeks..shape.total_weeks).collect(),
            SplitMode::RandomWeeks => {
                let mut w = sample(rng, shape.total_weeks, shape.validation_weeks).into_vec();
                w.sort_unstable();
                w
            }
        };
        let mut is_val = vec![false; shape.total_weeks];
        val_weeks.iter().for_each(|&w| is_val[w] = true);
        let (mut train_days, mut val_days) = (Vec::new(), Vec::new());
        for day in start.max(first_usable)..target {
            if is_val[(day - start) / 7] {
                val_days.push(day);
            } else {
                train_days.push(day);
            }
        }
        if train_days.is_empty() || val_days.is_empty() {
            return Err(EpfError::Split("split leaves an empty training or validation set".into()));
        }
        Ok(Self {
            train_days,
            val_days,
            mode,
        })
    }
}

/// A trained network with its frozen scalers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnModel {
    pub format_version: u32,
    pub hyperparams: DnnHyperparams,
    pub network: Network,
    pub input_scaler: DnnScaler,
    pub output_scaler: DnnScaler,
    pub seed: u64,
}

const CHECKPOINT_VERSION: u32 = 1;

/// Fresh network for `hyperparams`, with identity scalers.
pub fn build_network(hyperparams: &DnnHyperparams, input_dim: usize, seed: u64) -> Result<DnnModel> {
    hyperparams.validate()?;
    if input_dim != hyperparams.mask.row_len() {
        return Err(EpfError::Config(format!(
            "input dimension {input_dim} does not match the feature mask ({} columns)",
            hyperparams.mask.row_len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let network = Network::new(
        input_dim,
        hyperparams.n1,
        hyperparams.n2,
        hyperparams.activation,
        hyperparams.init,
        hyperparams.batch_norm,
        hyperparams.dropout,
        &mut rng,
    )?;
    Ok(DnnModel {
        format_version: CHECKPOINT_VERSION,
        hyperparams: *hyperparams,
        network,
        input_scaler: DnnScaler::identity(input_dim),
        output_scaler: DnnScaler::identity(HOURS),
        seed,
    })
}

impl DnnModel {
    /// Price forecasts for raw (unscaled) input rows.
    pub fn predict(&self, raw: ndarray::ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let x = self.input_scaler.apply(raw)?;
        let out = self.network.predict(x.view())?;
        self.output_scaler.invert(out.view())
    }

    pub fn forecast_row(&self, raw: ndarray::ArrayView1<'_, f64>) -> Result<[f64; HOURS]> {
        let out = self.predict(raw.insert_axis(Axis(0)))?;
        let mut y = [0.0; HOURS];
        y.iter_mut().zip(out.iter()).for_each(|(o, v)| *o = *v);
        Ok(y)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)?).map_err(|e| EpfError::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| EpfError::io(path, e))?;
        let model: Self = serde_json::from_str(&text)?;
        if model.format_version != CHECKPOINT_VERSION {
            return Err(EpfError::Config(format!(
                "checkpoint version {} not supported",
                model.format_version
            )));
        }
        if model.network.params.len() != model.network.n_params() {
            return Err(EpfError::Shape("checkpoint parameter count does not match its layout".into()));
        }
        Ok(model)
    }
}

/// Everything needed to retrain the DNN for one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnConfig {
    pub hyperparams: DnnHyperparams,
    pub train: TrainOptions,
    pub shape: SplitShape,
    pub mode: SplitMode,
    pub seed: u64,
}

impl DnnConfig {
    pub fn new(hyperparams: DnnHyperparams, seed: u64) -> Self {
        Self {
            hyperparams,
            train: TrainOptions::default(),
            shape: SplitShape::default(),
            mode: SplitMode::RandomWeeks,
            seed,
        }
    }
}

/// Seed for one target day, derived from the run's base seed.
pub fn day_seed(base: u64, target: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ (target as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean absolute error in price units.
fn price_mae(model: &DnnModel, x_scaled: &Array2<f64>, y_raw: &Array2<f64>) -> Result<f64> {
    let out = model.network.predict(x_scaled.view())?;
    let prices = model.output_scaler.invert(out.view())?;
    Ok(prices.iter().zip(y_raw.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / prices.len() as f64)
}

/// Trains a model on `split` (days visible through `info`).
pub fn fit_on_split(
    info: &InformationSet<'_>,
    split: &TrainSplit,
    hyperparams: &DnnHyperparams,
    opts: &TrainOptions,
    seed: u64,
) -> Result<(DnnModel, TrainHistory)> {
    hyperparams.validate()?;
    let mask = &hyperparams.mask;
    let (x_train, y_train) = build_dnn_design(info, &split.train_days, mask)?;
    let (x_val, y_val) = build_dnn_design(info, &split.val_days, mask)?;
    let passthrough: Vec<usize> = mask.weekday_column().into_iter().collect();

    let mut model = build_network(hyperparams, mask.row_len(), seed)?;
    // Scalers see training rows only and are frozen from here on.
    model.input_scaler = DnnScaler::fit(hyperparams.scaler, x_train.view(), &passthrough)?;
    model.output_scaler = DnnScaler::fit(hyperparams.scaler, y_train.view(), &[])?;
    let data = TrainData {
        x_train: model.input_scaler.apply(x_train.view())?,
        y_train: model.output_scaler.apply(y_train.view())?,
        x_val: model.input_scaler.apply(x_val.view())?,
        y_val: model.output_scaler.apply(y_val.view())?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let output_scaler = model.output_scaler.clone();
    let history = {
        let x_val = &data.x_val;
        let score = |net: &Network| -> Result<f64> {
            let out = net.predict(x_val.view())?;
            let prices = output_scaler.invert(out.view())?;
            Ok(prices.iter().zip(y_val.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / prices.len() as f64)
        };
        train(
            &mut model.network,
            &data,
            hyperparams.learning_rate,
            hyperparams.l1,
            opts,
            &mut rng,
            &score,
        )?
    };
    debug_assert!((price_mae(&model, &data.x_val, &y_val)? - history.best_val_score).abs() < 1e-9);
    Ok((model, history))
}

/// Retrains from scratch on the window before the target and forecasts it.
pub fn recalibrate_forecast_day(info: &InformationSet<'_>, config: &DnnConfig) -> Result<[f64; HOURS]> {
    let seed = day_seed(config.seed, info.target());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split = TrainSplit::new(
        info.target(),
        config.shape,
        config.mode,
        config.hyperparams.mask.max_lag(),
        &mut rng,
    )?;
    let (model, _) = fit_on_split(info, &split, &config.hyperparams, &config.train, seed)?;
    let row = dnn_input(info, info.target(), &config.hyperparams.mask)?;
    let out = model.forecast_row(row.view())?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(EpfError::Numeric(format!("non-finite DNN forecast for {}", info.target_date())));
    }
    Ok(out)
}

pub struct DnnForecaster {
    pub config: DnnConfig,
}

impl DailyForecaster for DnnForecaster {
    type State = ();

    fn forecast_day(&self, info: &InformationSet<'_>, _: &mut ()) -> Result<[f64; HOURS]> {
        recalibrate_forecast_day(info, &self.config)
    }
}

/// Daily-retrained DNN forecasts over `period`.
pub fn backtest_dnn(
    dataset: &MarketDataset,
    period: &TestPeriod,
    config: &DnnConfig,
    opts: &BacktestOptions,
) -> Result<BacktestOutput> {
    config.hyperparams.validate()?;
    run_backtest(
        &DnnForecaster {
            config: config.clone(),
        },
        dataset,
        period,
        opts,
    )
}

/// Conventional file name for a DNN forecast, e.g. `NP_dnn_1.csv`.
pub fn forecast_file_name(market_id: &str, member: usize) -> PathBuf {
    PathBuf::from(format!("{market_id}_dnn_{member}.csv"))
}
