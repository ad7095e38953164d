//! Reproducible synthetic market data for tests, demos and timing runs.
//!
//! Prices follow a linear response to a load-like and a wind-like exogenous
//! series plus an AR(1) hourly disturbance, with daily and weekly profiles and
//! occasional spikes.

use chrono::{Datelike, Duration, NaiveDate};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::MarketDataset;
use crate::HOURS;

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub market_id: String,
    pub start: NaiveDate,
    pub days: usize,
    pub seed: u64,
    /// Standard deviation of the hourly price disturbance.
    pub noise: f64,
    /// Daily probability of a price spike at one hour.
    pub spike_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            market_id: "SYN".into(),
            start: NaiveDate::from_ymd_opt(2013, 1, 1).expect("valid date"),
            days: super::BENCHMARK_DAYS,
            seed: 7,
            noise: 1.5,
            spike_rate: 0.01,
        }
    }
}

fn daily_shape(h: usize) -> f64 {
    let x = h as f64 / HOURS as f64 * std::f64::consts::TAU;
    -0.6 * x.cos() - 0.25 * (2.0 * x).cos()
}

pub fn generate(cfg: &SyntheticConfig) -> MarketDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let n = cfg.days;
    let mut prices = Array2::zeros((n, HOURS));
    let mut load = Array2::zeros((n, HOURS));
    let mut wind = Array2::zeros((n, HOURS));
    let dates: Vec<NaiveDate> = (0..n).map(|i| cfg.start + Duration::days(i as i64)).collect();

    let mut load_level = 0.0;
    let mut wind_level = 0.0;
    let mut disturbance = [0.0; HOURS];
    for (d, date) in dates.iter().enumerate() {
        let weekday = date.weekday().num_days_from_monday();
        let weekend = if weekday >= 5 { -120.0 } else { 0.0 };
        let season = 80.0 * (d as f64 / 364.0 * std::f64::consts::TAU).cos();
        load_level = 0.8 * load_level + 40.0 * unit.sample(&mut rng);
        wind_level = 0.85 * wind_level + 0.45 * unit.sample(&mut rng);
        let spike_hour = (rng.random::<f64>() < cfg.spike_rate).then(|| rng.random_range(7..21));
        for h in 0..HOURS {
            let l = 1000.0 + season + weekend + 300.0 * daily_shape(h) + load_level + 15.0 * unit.sample(&mut rng);
            let w = (250.0 + 180.0 * wind_level.tanh() + 20.0 * unit.sample(&mut rng)).max(0.0);
            disturbance[h] = 0.5 * disturbance[h] + cfg.noise * unit.sample(&mut rng);
            let mut p = 8.0 + 0.035 * l - 0.04 * w + disturbance[h];
            if spike_hour == Some(h) {
                p += 25.0 + 10.0 * unit.sample(&mut rng).abs();
            }
            prices[[d, h]] = p;
            load[[d, h]] = l;
            wind[[d, h]] = w;
        }
    }
    MarketDataset::new(cfg.market_id.clone(), dates, prices, load, wind)
        .expect("synthetic data is well formed")
}
