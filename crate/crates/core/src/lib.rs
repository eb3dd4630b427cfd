//! Two-phase time-series forecasting.
//!
//! Phase 1 fits a conditional mean model over basis-function features
//! (growth, Fourier seasonality, events, changepoints, lags, regressors,
//! interactions). Phase 2 fits conditional residual quantiles by
//! categorical feature combination to form prediction intervals without
//! touching the point forecast. Trend and seasonality changepoints are
//! detected automatically with an adaptively weighted L1 penalty.

pub mod changepoint;
pub mod cli;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod mean_model;
pub mod solvers;
pub mod timebase;
pub mod volatility;

pub use error::{Error, Result};
pub use timebase::{Frequency, TimeSeries};
