//! Mini-batch Adam with early stopping on a validation score.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use tracing::debug;

use super::network::Network;
use crate::{EpfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamOptions {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamOptions {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    opts: AdamOptions,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(learning_rate: f64, n_params: usize, opts: AdamOptions) -> Self {
        Self {
            learning_rate,
            opts,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let AdamOptions { beta1, beta2, epsilon } = self.opts;
        let lr_t = self.learning_rate * (1.0 - beta2.powi(self.t)).sqrt() / (1.0 - beta1.powi(self.t));
        for i in 0..params.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            params[i] -= lr_t * self.m[i] / (self.v[i].sqrt() + epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub adam: AdamOptions,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 192,
            max_epochs: 1000,
            patience: 20,
            adam: AdamOptions::default(),
        }
    }
}

/// Scaled training and validation matrices.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub x_train: Array2<f64>,
    pub y_train: Array2<f64>,
    pub x_val: Array2<f64>,
    pub y_val: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 0-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_score: f64,
}

/// Mean absolute error of the network on `(x, y)` in the scaled space.
pub fn scaled_mae(net: &Network, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<f64> {
    let out = net.predict(x)?;
    Ok(out.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / out.len() as f64)
}

/// Trains `net` in place and leaves it at the best validation epoch.
///
/// `val_score` is evaluated after every epoch (lower is better). Training
/// stops once `patience` epochs pass without improvement, so with patience 0
/// exactly one epoch runs past the best one.
pub fn train(
    net: &mut Network,
    data: &TrainData,
    learning_rate: f64,
    l1: f64,
    opts: &TrainOptions,
    rng: &mut impl Rng,
    val_score: &dyn Fn(&Network) -> Result<f64>,
) -> Result<TrainHistory> {
    let n = data.x_train.nrows();
    if n == 0 || data.x_val.nrows() == 0 {
        return Err(EpfError::Split("training and validation sets must be non-empty".into()));
    }
    if opts.batch_size == 0 || opts.max_epochs == 0 {
        return Err(EpfError::Config("batch size and epoch budget must be positive".into()));
    }
    let mut adam = Adam::new(learning_rate, net.params.len(), opts.adam);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_score: f64::INFINITY,
    };
    let mut best = net.clone();

    for epoch in 0..opts.max_epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(opts.batch_size) {
            // Batch statistics of a single row are degenerate.
            if net.batch_norm && chunk.len() < 2 {
                continue;
            }
            let xb = data.x_train.select(Axis(0), chunk);
            let yb = data.y_train.select(Axis(0), chunk);
            let masks = net.sample_masks(chunk.len(), rng);
            let (loss, grad, stats) = net.loss_and_grad(xb.view(), yb.view(), l1, masks.as_ref())?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(EpfError::Divergence { epoch });
            }
            adam.step(&mut net.params, &grad);
            net.update_running(&stats);
            loss_sum += loss;
            batches += 1;
        }
        let score = val_score(net)?;
        if !score.is_finite() || net.params.iter().any(|p| !p.is_finite()) {
            return Err(EpfError::Divergence { epoch });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_score: score,
        });
        if score < history.best_val_score {
            history.best_val_score = score;
            history.best_epoch = epoch;
            best.clone_from(net);
        } else if epoch - history.best_epoch > opts.patience {
            break;
        }
    }
    debug!(
        epochs = history.epochs.len(),
        best_epoch = history.best_epoch,
        best = history.best_val_score,
        "training finished"
    );
    *net = best;
    Ok(history)
}
