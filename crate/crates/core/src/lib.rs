//! Benchmark toolbox for day-ahead electricity price forecasting.
//!
//! The crate bundles everything needed to run the open benchmark protocol for
//! day-ahead markets:
//!
//! - [`data`]: market datasets (hourly prices plus two exogenous day-ahead
//!   forecasts), calendar normalization, test splits and rolling calibration
//!   windows.
//! - [`features`]: the fixed lag/exogenous/weekday feature maps.
//! - [`transform`]: variance-stabilizing and scaling preprocessors.
//! - [`lear`]: the LASSO-estimated autoregressive model, with LARS+AIC
//!   penalty selection and coordinate-descent refits.
//! - [`dnn`]: a two-hidden-layer feedforward network trained with Adam.
//! - [`hyperopt`]: tree-structured Parzen estimator search over features and
//!   network hyperparameters.
//! - [`ensemble`], [`metrics`], [`stattests`]: forecast combination,
//!   accuracy metrics and Diebold-Mariano / Giacomini-White tests.
//!
//! Every model is recalibrated daily through [`backtest`], which also records
//! per-day wall time and supports resuming interrupted runs.

pub mod backtest;
pub mod data;
pub mod dnn;
pub mod ensemble;
mod error;
pub mod features;
pub mod forecast;
pub mod hyperopt;
pub mod lear;
pub mod metrics;
pub mod stattests;
pub mod transform;

pub use error::{EpfError, Result};
pub use forecast::ForecastMatrix;

/// Number of delivery periods in one day-ahead auction.
pub const HOURS: usize = 24;
