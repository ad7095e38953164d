//! Tree-structured Parzen estimator over independent typed dimensions.
//!
//! Points are `Vec<f64>`: continuous values as-is, integers as whole numbers,
//! categories as their index.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Dimension {
    Uniform { low: f64, high: f64 },
    /// Uniform in `ln x`.
    LogUniform { low: f64, high: f64 },
    /// Inclusive integer range.
    Integer { low: i64, high: i64 },
    Categorical { n: usize },
}

impl Dimension {
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Dimension::Uniform { low, high } | Dimension::LogUniform { low, high } => (low..=high).contains(&x),
            Dimension::Integer { low, high } => x.fract() == 0.0 && (low as f64..=high as f64).contains(&x),
            Dimension::Categorical { n } => x.fract() == 0.0 && x >= 0.0 && (x as usize) < n,
        }
    }

    fn validate(&self) -> bool {
        match *self {
            Dimension::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
            Dimension::LogUniform { low, high } => low > 0.0 && high.is_finite() && low < high,
            Dimension::Integer { low, high } => low <= high,
            Dimension::Categorical { n } => n > 0,
        }
    }

    /// Draw from the prior.
    pub fn sample_prior(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            Dimension::Uniform { low, high } => rng.random_range(low..=high),
            Dimension::LogUniform { low, high } => rng.random_range(low.ln()..=high.ln()).exp().clamp(low, high),
            Dimension::Integer { low, high } => rng.random_range(low..=high) as f64,
            Dimension::Categorical { n } => rng.random_range(0..n) as f64,
        }
    }

    /// Bounds of the internal (possibly log) scale where the Parzen
    /// estimator lives. Integers get half-unit margins so every value owns a
    /// unit-width bin.
    fn internal_bounds(&self) -> (f64, f64) {
        match *self {
            Dimension::Uniform { low, high } => (low, high),
            Dimension::LogUniform { low, high } => (low.ln(), high.ln()),
            Dimension::Integer { low, high } => (low as f64 - 0.5, high as f64 + 0.5),
            Dimension::Categorical { .. } => unreachable!("categorical dimensions have no Parzen scale"),
        }
    }

    fn to_internal(self, x: f64) -> f64 {
        match self {
            Dimension::LogUniform { .. } => x.ln(),
            _ => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpeOptions {
    /// Fraction of the history forming the "good" set.
    pub gamma: f64,
    /// Trials drawn from the prior before the model kicks in.
    pub n_startup: usize,
    /// Candidates drawn from l(x) per suggestion.
    pub n_ei_candidates: usize,
}

impl Default for TpeOptions {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            n_startup: 20,
            n_ei_candidates: 24,
        }
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Truncated Gaussian mixture (adaptive Parzen estimator).
#[derive(Debug, Clone)]
struct Parzen {
    mus: Vec<f64>,
    sigmas: Vec<f64>,
    low: f64,
    high: f64,
}

impl Parzen {
    /// Bandwidths follow the adaptive rule: each kernel's sigma is the larger
    /// gap to its sorted neighbours, clipped to [range / min(100, 1 + n), range].
    /// The prior kernel sits at the midpoint with sigma = range.
    fn fit(obs: &[f64], low: f64, high: f64) -> Self {
        let prior_mu = 0.5 * (low + high);
        let prior_sigma = high - low;
        let mut mus: Vec<f64> = obs.to_vec();
        mus.push(prior_mu);
        mus.sort_by(f64::total_cmp);
        let n = mus.len();
        let mut sigmas = vec![prior_sigma; n];
        if n > 1 {
            for i in 0..n {
                let left = if i > 0 { mus[i] - mus[i - 1] } else { mus[1] - mus[0] };
                let right = if i + 1 < n { mus[i + 1] - mus[i] } else { mus[i] - mus[i - 1] };
                sigmas[i] = left.max(right);
            }
        }
        let min_sigma = prior_sigma / (100.0f64).min(1.0 + n as f64);
        for s in sigmas.iter_mut() {
            *s = s.clamp(min_sigma, prior_sigma);
        }
        if let Some(i) = mus.iter().position(|&m| m == prior_mu) {
            sigmas[i] = prior_sigma;
        }
        Self { mus, sigmas, low, high }
    }

    fn mass(&self, k: usize, a: f64, b: f64) -> f64 {
        let (mu, s) = (self.mus[k], self.sigmas[k]);
        normal_cdf((b - mu) / s) - normal_cdf((a - mu) / s)
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        let k = rng.random_range(0..self.mus.len());
        let (mu, s) = (self.mus[k], self.sigmas[k]);
        for _ in 0..256 {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let x = mu + s * z;
            if (self.low..=self.high).contains(&x) {
                return x;
            }
        }
        mu.clamp(self.low, self.high)
    }

    fn density(&self, x: f64) -> f64 {
        let w = 1.0 / self.mus.len() as f64;
        (0..self.mus.len())
            .map(|k| {
                let (mu, s) = (self.mus[k], self.sigmas[k]);
                let z = (x - mu) / s;
                let pdf = (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
                w * pdf / self.mass(k, self.low, self.high).max(1e-300)
            })
            .sum()
    }

    /// Probability of the unit bin around an integer value.
    fn bin_mass(&self, x: f64) -> f64 {
        let w = 1.0 / self.mus.len() as f64;
        (0..self.mus.len())
            .map(|k| w * self.mass(k, x - 0.5, x + 0.5) / self.mass(k, self.low, self.high).max(1e-300))
            .sum()
    }
}

/// Per-dimension density estimate.
#[derive(Debug, Clone)]
enum Estimator {
    Parzen(Dimension, Parzen),
    Categorical(Vec<f64>),
}

impl Estimator {
    fn fit(dim: &Dimension, values: &[f64]) -> Self {
        match *dim {
            Dimension::Categorical { n } => {
                let mut counts = vec![1.0; n];
                values.iter().for_each(|&v| counts[v as usize] += 1.0);
                let total: f64 = counts.iter().sum();
                Estimator::Categorical(counts.into_iter().map(|c| c / total).collect())
            }
            _ => {
                let (low, high) = dim.internal_bounds();
                let obs: Vec<f64> = values.iter().map(|&v| dim.to_internal(v)).collect();
                Estimator::Parzen(*dim, Parzen::fit(&obs, low, high))
            }
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            Estimator::Categorical(p) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        return i as f64;
                    }
                }
                (p.len() - 1) as f64
            }
            Estimator::Parzen(dim, parzen) => {
                let v = parzen.sample(rng);
                match *dim {
                    Dimension::Uniform { low, high } => v.clamp(low, high),
                    Dimension::LogUniform { low, high } => v.exp().clamp(low, high),
                    Dimension::Integer { low, high } => v.round().clamp(low as f64, high as f64),
                    Dimension::Categorical { .. } => unreachable!(),
                }
            }
        }
    }

    fn log_density(&self, x: f64) -> f64 {
        let p = match self {
            Estimator::Categorical(p) => p[x as usize],
            Estimator::Parzen(dim @ Dimension::Integer { .. }, parzen) => parzen.bin_mass(dim.to_internal(x)),
            Estimator::Parzen(dim, parzen) => parzen.density(dim.to_internal(x)),
        };
        p.max(1e-300).ln()
    }
}

/// Rejects malformed spaces and histories that fall outside them.
pub fn check_space(space: &[Dimension]) -> bool {
    !space.is_empty() && space.iter().all(Dimension::validate)
}

/// Draws a full point from the prior.
pub fn sample_prior(space: &[Dimension], rng: &mut impl Rng) -> Vec<f64> {
    space.iter().map(|d| d.sample_prior(rng)).collect()
}

/// Next point to evaluate given `(point, objective)` history (lower is better).
///
/// Non-finite objectives (failed trials) count as the worst outcomes.
pub fn tpe_suggest(space: &[Dimension], history: &[(Vec<f64>, f64)], opts: &TpeOptions, rng: &mut impl Rng) -> Vec<f64> {
    if history.len() < opts.n_startup.max(1) {
        return sample_prior(space, rng);
    }
    let mut order: Vec<usize> = (0..history.len()).collect();
    let key = |i: &usize| {
        let v = history[*i].1;
        if v.is_nan() { f64::INFINITY } else { v }
    };
    order.sort_by(|a, b| key(a).total_cmp(&key(b)).then(a.cmp(b)));
    let n_good = ((opts.gamma * history.len() as f64).ceil() as usize).clamp(1, history.len() - 1);
    let (good, bad) = order.split_at(n_good);

    let estimators: Vec<(Estimator, Estimator)> = space
        .iter()
        .enumerate()
        .map(|(d, dim)| {
            let col = |idx: &[usize]| idx.iter().map(|&i| history[i].0[d]).collect::<Vec<_>>();
            (Estimator::fit(dim, &col(good)), Estimator::fit(dim, &col(bad)))
        })
        .collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..opts.n_ei_candidates.max(1) {
        let x: Vec<f64> = estimators.iter().map(|(l, _)| l.sample(rng)).collect();
        let score: f64 = estimators
            .iter()
            .zip(&x)
            .map(|((l, g), &v)| l.log_density(v) - g.log_density(v))
            .sum();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, x));
        }
    }
    best.expect("at least one candidate").1
}
