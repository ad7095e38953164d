//! Two-hidden-layer feedforward network on a flat parameter vector.
//!
//! Per hidden layer: affine → (batch norm) → activation → (dropout).
//! The output layer is affine with 24 units. Kernels are stored input-major
//! (`fan_in × fan_out`), so a batch forward is `A · W + b`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{EpfError, Result, HOURS};

/// Batch-norm stabilizer and running-average momentum.
pub const BN_EPSILON: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Softplus,
    LeakyRelu,
    /// Identity; not part of the search space.
    Linear,
}

impl Activation {
    /// The kinds available to hyperparameter search.
    pub const SEARCHABLE: [Activation; 5] = [
        Activation::Relu,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Softplus,
        Activation::LeakyRelu,
    ];
    pub const ALL: [Activation; 6] = [
        Activation::Relu,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Softplus,
        Activation::LeakyRelu,
        Activation::Linear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softplus => "softplus",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Linear => "linear",
        }
    }

    pub fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Relu => u.max(0.0),
            Activation::Tanh => u.tanh(),
            Activation::Sigmoid => sigmoid(u),
            Activation::Softplus => u.max(0.0) + (-u.abs()).exp().ln_1p(),
            Activation::LeakyRelu => {
                if u > 0.0 {
                    u
                } else {
                    LEAKY_SLOPE * u
                }
            }
            Activation::Linear => u,
        }
    }

    /// Derivative at pre-activation `u`, given `h = apply(u)`.
    fn derivative(self, u: f64, h: f64) -> f64 {
        match self {
            Activation::Relu => f64::from(u > 0.0),
            Activation::Tanh => 1.0 - h * h,
            Activation::Sigmoid => h * (1.0 - h),
            Activation::Softplus => sigmoid(u),
            Activation::LeakyRelu => {
                if u > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = EpfError;

    fn from_str(s: &str) -> Result<Self> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| EpfError::Config(format!("unknown activation '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    GlorotUniform,
    HeUniform,
    LecunUniform,
    /// All zeros; for tests.
    Zeros,
}

impl InitKind {
    pub const SEARCHABLE: [InitKind; 3] = [InitKind::GlorotUniform, InitKind::HeUniform, InitKind::LecunUniform];
    pub const ALL: [InitKind; 4] = [
        InitKind::GlorotUniform,
        InitKind::HeUniform,
        InitKind::LecunUniform,
        InitKind::Zeros,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InitKind::GlorotUniform => "glorot_uniform",
            InitKind::HeUniform => "he_uniform",
            InitKind::LecunUniform => "lecun_uniform",
            InitKind::Zeros => "zeros",
        }
    }

    fn limit(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitKind::GlorotUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            InitKind::HeUniform => (6.0 / fan_in as f64).sqrt(),
            InitKind::LecunUniform => (3.0 / fan_in as f64).sqrt(),
            InitKind::Zeros => 0.0,
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitKind {
    type Err = EpfError;

    fn from_str(s: &str) -> Result<Self> {
        InitKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| EpfError::Config(format!("unknown weight init '{s}'")))
    }
}

/// Offsets of one layer's parameters in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlots {
    pub fan_in: usize,
    pub fan_out: usize,
    pub kernel: usize,
    pub bias: usize,
    /// Batch-norm scale and shift, hidden layers only.
    pub bn: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub input_dim: usize,
    pub n1: usize,
    pub n2: usize,
    pub activation: Activation,
    pub batch_norm: bool,
    pub dropout: f64,
    pub params: Vec<f64>,
    /// Running batch-norm mean and variance per hidden layer.
    pub running_mean: Vec<Vec<f64>>,
    pub running_var: Vec<Vec<f64>>,
}

/// Dropout keep-masks (already divided by the keep probability), one per hidden layer.
#[derive(Debug, Clone)]
pub struct DropoutMasks(pub Vec<Array2<f64>>);

/// Batch statistics from a training forward pass, for the running averages.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<Array1<f64>>,
    pub var: Vec<Array1<f64>>,
}

struct HiddenCache {
    input: Array2<f64>,
    zhat: Array2<f64>,
    inv_std: Array1<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

impl Network {
    pub fn new(
        input_dim: usize,
        n1: usize,
        n2: usize,
        activation: Activation,
        init: InitKind,
        batch_norm: bool,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if input_dim == 0 || n1 == 0 || n2 == 0 {
            return Err(EpfError::Config(format!(
                "layer sizes must be positive, got {input_dim}×{n1}×{n2}"
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(EpfError::Config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let mut net = Self {
            input_dim,
            n1,
            n2,
            activation,
            batch_norm,
            dropout,
            params: Vec::new(),
            running_mean: vec![vec![0.0; n1], vec![0.0; n2]],
            running_var: vec![vec![1.0; n1], vec![1.0; n2]],
        };
        net.params = vec![0.0; net.n_params()];
        for slot in net.layers() {
            let limit = init.limit(slot.fan_in, slot.fan_out);
            if limit > 0.0 {
                for w in &mut net.params[slot.kernel..slot.kernel + slot.fan_in * slot.fan_out] {
                    *w = rng.random_range(-limit..limit);
                }
            }
            if let Some((gamma, _)) = slot.bn {
                net.params[gamma..gamma + slot.fan_out].fill(1.0);
            }
        }
        Ok(net)
    }

    pub fn layers(&self) -> [LayerSlots; 3] {
        let dims = [(self.input_dim, self.n1), (self.n1, self.n2), (self.n2, HOURS)];
        let mut off = 0;
        let mut l = 0;
        dims.map(|(fan_in, fan_out)| {
            let kernel = off;
            let bias = kernel + fan_in * fan_out;
            off = bias + fan_out;
            let bn = (self.batch_norm && l < 2).then(|| {
                let gamma = off;
                off += 2 * fan_out;
                (gamma, gamma + fan_out)
            });
            l += 1;
            LayerSlots {
                fan_in,
                fan_out,
                kernel,
                bias,
                bn,
            }
        })
    }

    pub fn n_params(&self) -> usize {
        let last = self.layers()[2];
        last.bias + last.fan_out
    }

    fn kernel(&self, s: &LayerSlots) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((s.fan_in, s.fan_out), &self.params[s.kernel..s.kernel + s.fan_in * s.fan_out])
            .expect("layout")
    }

    fn vector(&self, start: usize, len: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[start..start + len])
    }

    /// Sum of absolute kernel weights (biases and batch-norm terms excluded).
    pub fn kernel_l1(&self) -> f64 {
        self.layers()
            .iter()
            .map(|s| self.params[s.kernel..s.kernel + s.fan_in * s.fan_out].iter().map(|w| w.abs()).sum::<f64>())
            .sum()
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(EpfError::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Inference-mode forward pass (running batch-norm statistics, no dropout).
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let layers = self.layers();
        let mut a = x.to_owned();
        for (l, s) in layers[..2].iter().enumerate() {
            let mut z = a.dot(&self.kernel(s)) + self.vector(s.bias, s.fan_out);
            if let Some((g, b)) = s.bn {
                let (gamma, beta) = (self.vector(g, s.fan_out), self.vector(b, s.fan_out));
                for mut row in z.rows_mut() {
                    for j in 0..s.fan_out {
                        let zhat = (row[j] - self.running_mean[l][j]) / (self.running_var[l][j] + BN_EPSILON).sqrt();
                        row[j] = gamma[j] * zhat + beta[j];
                    }
                }
            }
            z.mapv_inplace(|u| self.activation.apply(u));
            a = z;
        }
        let out = &layers[2];
        Ok(a.dot(&self.kernel(out)) + self.vector(out.bias, out.fan_out))
    }

    pub fn predict_row(&self, row: ArrayView1<'_, f64>) -> Result<[f64; HOURS]> {
        let out = self.predict(row.insert_axis(Axis(0)))?;
        let mut y = [0.0; HOURS];
        y.iter_mut().zip(out.iter()).for_each(|(o, v)| *o = *v);
        Ok(y)
    }

    /// Fresh dropout masks for a batch of `rows`; `None` when dropout is off.
    pub fn sample_masks(&self, rows: usize, rng: &mut impl Rng) -> Option<DropoutMasks> {
        (self.dropout > 0.0).then(|| {
            let keep = 1.0 - self.dropout;
            DropoutMasks(
                [self.n1, self.n2]
                    .iter()
                    .map(|&w| Array2::from_shape_fn((rows, w), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }))
                    .collect(),
            )
        })
    }

    fn forward_train(
        &self,
        x: ArrayView2<'_, f64>,
        masks: Option<&DropoutMasks>,
    ) -> (Vec<HiddenCache>, Array2<f64>, BatchStats) {
        let layers = self.layers();
        let rows = x.nrows() as f64;
        let mut caches = Vec::with_capacity(2);
        let mut stats = BatchStats {
            mean: Vec::new(),
            var: Vec::new(),
        };
        let mut a = x.to_owned();
        for (l, s) in layers[..2].iter().enumerate() {
            let z = a.dot(&self.kernel(s)) + self.vector(s.bias, s.fan_out);
            let (zhat, inv_std, pre) = match s.bn {
                Some((g, b)) => {
                    let mean = z.sum_axis(Axis(0)) / rows;
                    let centered = &z - &mean;
                    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / rows;
                    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
                    let zhat = &centered * &inv_std;
                    let pre = &zhat * &self.vector(g, s.fan_out) + self.vector(b, s.fan_out);
                    stats.mean.push(mean);
                    stats.var.push(var);
                    (zhat, inv_std, pre)
                }
                None => (Array2::zeros((0, 0)), Array1::zeros(0), z),
            };
            let act = pre.mapv(|u| self.activation.apply(u));
            let out = match masks {
                Some(m) => &act * &m.0[l],
                None => act.clone(),
            };
            caches.push(HiddenCache {
                input: std::mem::replace(&mut a, out),
                zhat,
                inv_std,
                pre,
                act,
            });
        }
        let s = &layers[2];
        let out = a.dot(&self.kernel(s)) + self.vector(s.bias, s.fan_out);
        caches.push(HiddenCache {
            input: a,
            zhat: Array2::zeros((0, 0)),
            inv_std: Array1::zeros(0),
            pre: Array2::zeros((0, 0)),
            act: Array2::zeros((0, 0)),
        });
        (caches, out, stats)
    }

    /// Training-mode loss: mean absolute error over all outputs plus
    /// `l1 · Σ|kernel weights|`.
    pub fn loss(&self, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, l1: f64, masks: Option<&DropoutMasks>) -> f64 {
        let (_, out, _) = self.forward_train(x, masks);
        mae(&out, &y) + l1 * self.kernel_l1()
    }

    /// Loss, its gradient with respect to `params`, and batch statistics.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
        l1: f64,
        masks: Option<&DropoutMasks>,
    ) -> Result<(f64, Vec<f64>, BatchStats)> {
        self.check_input(&x)?;
        if y.dim() != (x.nrows(), HOURS) {
            return Err(EpfError::Shape(format!("targets are {:?}, expected ({}, {HOURS})", y.dim(), x.nrows())));
        }
        let layers = self.layers();
        let (caches, out, stats) = self.forward_train(x, masks);
        let loss = mae(&out, &y) + l1 * self.kernel_l1();
        let mut grad = vec![0.0; self.params.len()];
        let count = out.len() as f64;
        let rows = x.nrows() as f64;

        // d(MAE)/d(out)
        let mut delta = Array2::from_shape_fn(out.dim(), |(i, j)| {
            let r = out[[i, j]] - y[[i, j]];
            if r > 0.0 {
                1.0 / count
            } else if r < 0.0 {
                -1.0 / count
            } else {
                0.0
            }
        });
        for l in (0..3).rev() {
            let s = &layers[l];
            let cache = &caches[l];
            if l < 2 {
                // delta holds d/d(layer output after dropout); step back to d/d(pre-activation).
                if let Some(m) = masks {
                    delta *= &m.0[l];
                }
                let act = self.activation;
                ndarray::Zip::from(&mut delta)
                    .and(&cache.pre)
                    .and(&cache.act)
                    .for_each(|d, &u, &h| *d *= act.derivative(u, h));
                if let Some((g, b)) = s.bn {
                    let gamma = self.vector(g, s.fan_out);
                    let dgamma = (&delta * &cache.zhat).sum_axis(Axis(0));
                    let dbeta = delta.sum_axis(Axis(0));
                    grad[g..g + s.fan_out].copy_from_slice(dgamma.as_slice().expect("contiguous"));
                    grad[b..b + s.fan_out].copy_from_slice(dbeta.as_slice().expect("contiguous"));
                    let dzhat = &delta * &gamma;
                    let sum_dzhat = dzhat.sum_axis(Axis(0));
                    let sum_dzhat_zhat = (&dzhat * &cache.zhat).sum_axis(Axis(0));
                    let mut dz = dzhat * rows - &sum_dzhat - &(&cache.zhat * &sum_dzhat_zhat);
                    dz *= &(&cache.inv_std / rows);
                    delta = dz;
                }
            }
            let gk = cache.input.t().dot(&delta);
            let kernel = self.kernel(s);
            for (i, (g, w)) in gk.iter().zip(kernel.iter()).enumerate() {
                grad[s.kernel + i] = g + l1 * sign(*w);
            }
            let gb = delta.sum_axis(Axis(0));
            grad[s.bias..s.bias + s.fan_out].copy_from_slice(gb.as_slice().expect("contiguous"));
            if l > 0 {
                delta = delta.dot(&kernel.t());
            }
        }
        Ok((loss, grad, stats))
    }

    /// Moves the running batch-norm statistics towards a batch's.
    pub fn update_running(&mut self, stats: &BatchStats) {
        for l in 0..stats.mean.len() {
            for j in 0..stats.mean[l].len() {
                self.running_mean[l][j] = BN_MOMENTUM * self.running_mean[l][j] + (1.0 - BN_MOMENTUM) * stats.mean[l][j];
                self.running_var[l][j] = BN_MOMENTUM * self.running_var[l][j] + (1.0 - BN_MOMENTUM) * stats.var[l][j];
            }
        }
    }

    /// Mutable kernel of layer `l` (0, 1, 2), for hand-built networks.
    pub fn kernel_mut(&mut self, l: usize) -> ArrayViewMut2<'_, f64> {
        let s = self.layers()[l];
        ArrayViewMut2::from_shape((s.fan_in, s.fan_out), &mut self.params[s.kernel..s.kernel + s.fan_in * s.fan_out])
            .expect("layout")
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let s = self.layers()[l];
        &mut self.params[s.bias..s.bias + s.fan_out]
    }
}

fn sign(w: f64) -> f64 {
    if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn mae(out: &Array2<f64>, y: &ArrayView2<'_, f64>) -> f64 {
    let n = out.len() as f64;
    out.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n
}
