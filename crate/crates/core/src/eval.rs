//! Accuracy metrics and the rolling-window cross-validation harness.
//!
//! Test sets of one horizon length slide back from the series end; each
//! split carves a validation fold from the end of its training range,
//! selects the best spec by validation MAPE, refits on the full training
//! range and scores on the test set. Models never see data at or past
//! their test start.

use serde::{Deserialize, Serialize};
use std::ops::Range;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::mean_model::{fit, ModelSpec};
use crate::timebase::{RegressorTable, TimeSeries};

/// Mean absolute percentage error, in percent:
/// 100/T * sum |(y - yhat) / y|. Zero actuals are an error.
pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    mape_impl(actual, predicted, None)
}

/// MAPE with denominators floored at `epsilon`, for series with values
/// close to zero.
pub fn mape_with_epsilon(actual: &[f64], predicted: &[f64], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Config("mape epsilon must be > 0".into()));
    }
    mape_impl(actual, predicted, Some(epsilon))
}

fn mape_impl(actual: &[f64], predicted: &[f64], epsilon: Option<f64>) -> Result<f64> {
    if actual.len() != predicted.len() {
        return Err(Error::Data(format!(
            "mape length mismatch: {} vs {}",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Data("mape of empty vectors".into()));
    }
    let zeros: Vec<usize> = actual
        .iter()
        .enumerate()
        .filter(|(_, a)| **a == 0.0)
        .map(|(i, _)| i)
        .collect();
    if epsilon.is_none() && !zeros.is_empty() {
        return Err(Error::Data(format!(
            "mape undefined: zero actual values at indices {zeros:?}"
        )));
    }
    let mut sum = 0.0;
    for (a, p) in actual.iter().zip(predicted) {
        let denom = match epsilon {
            Some(eps) => a.abs().max(eps),
            None => a.abs(),
        };
        sum += ((a - p) / denom).abs();
    }
    Ok(100.0 * sum / actual.len() as f64)
}

/// Root mean square error.
pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() {
        return Err(Error::Data(format!(
            "rmse length mismatch: {} vs {}",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Data("rmse of empty vectors".into()));
    }
    let mse = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p) * (a - p))
        .sum::<f64>()
        / actual.len() as f64;
    Ok(mse.sqrt())
}

/// Rolling-window CV configuration, in series periods.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvConfig {
    /// Test and validation length.
    pub horizon: usize,
    /// Minimum training length per split.
    pub min_train_periods: usize,
    /// Spacing of consecutive test-set starts.
    pub periods_between_splits: usize,
    /// Maximum number of splits.
    pub num_splits: usize,
    /// Train from the series start (expanding window); otherwise each split
    /// trains on exactly `min_train_periods` before its test set.
    #[serde(default = "default_expanding")]
    pub expanding_window: bool,
}

fn default_expanding() -> bool {
    true
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0
            || self.min_train_periods == 0
            || self.periods_between_splits == 0
            || self.num_splits == 0
        {
            return Err(Error::Config("cv counts must all be positive".into()));
        }
        Ok(())
    }
}

/// One split: index ranges into the series. The validation fold is the last
/// `horizon` points of the training range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitIndices {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

/// Builds splits: test windows of `horizon` points anchored at the series
/// end and stepping back by `periods_between_splits`, then reported in
/// chronological order; splits whose training range would fall below
/// `min_train_periods` are discarded.
pub fn make_splits(series_length: usize, config: &CvConfig) -> Result<Vec<SplitIndices>> {
    config.validate()?;
    if config.min_train_periods + 2 * config.horizon > series_length {
        return Err(Error::Config(format!(
            "series of length {series_length} cannot hold {} training periods plus \
             validation and test folds of {}",
            config.min_train_periods, config.horizon
        )));
    }
    let mut splits = Vec::new();
    for k in 0..config.num_splits {
        let back = k * config.periods_between_splits + config.horizon;
        if back > series_length {
            break;
        }
        let test_start = series_length - back;
        if test_start < config.min_train_periods {
            break;
        }
        let train_start = if config.expanding_window {
            0
        } else {
            test_start - config.min_train_periods
        };
        splits.push(SplitIndices {
            train: train_start..test_start,
            validation: test_start - config.horizon..test_start,
            test: test_start..test_start + config.horizon,
        });
    }
    if splits.is_empty() {
        return Err(Error::Config(
            "no feasible cross-validation splits for this configuration".into(),
        ));
    }
    splits.reverse();
    Ok(splits)
}

/// Per-split outcome.
#[derive(Debug, Clone, Serialize)]
pub struct SplitResult {
    pub split: usize,
    pub chosen_spec: usize,
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
    pub val_mape: f64,
    pub test_mape: f64,
    pub test_rmse: f64,
    pub runtime_seconds: f64,
}

/// A fit that failed during the harness run.
#[derive(Debug, Clone, Serialize)]
pub struct CvFailure {
    pub split: usize,
    pub spec: usize,
    pub stage: String,
    pub message: String,
}

/// Cross-validation report: per-split selections and metrics plus
/// aggregates over the test sets.
#[derive(Debug, Clone, Serialize)]
pub struct CvReport {
    pub splits: Vec<SplitResult>,
    pub failures: Vec<CvFailure>,
    pub test_mape_mean: f64,
    pub test_mape_sd: f64,
    pub test_rmse_mean: f64,
    pub test_rmse_sd: f64,
    pub total_runtime_seconds: f64,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Fits `spec` on `train` and scores the forecast over `eval_range`, which
/// must start immediately after `train`.
fn score_range(
    series: &TimeSeries,
    regressors: &RegressorTable,
    spec: &ModelSpec,
    train: Range<usize>,
    eval_range: Range<usize>,
    mape_epsilon: Option<f64>,
) -> Result<(f64, f64)> {
    let train_series = series.slice(train.clone())?;
    let train_regs = if regressors.is_empty() {
        RegressorTable::new()
    } else {
        regressors.slice(train)
    };
    let model = fit(&train_series, &train_regs, spec)?;
    let horizon = eval_range.len();
    let future_regs = if regressors.is_empty() {
        RegressorTable::new()
    } else {
        regressors.slice(eval_range.clone())
    };
    let forecast = model.predict(horizon, &future_regs)?;
    // Score on rows with observed actuals.
    let mut actual = Vec::new();
    let mut predicted = Vec::new();
    for (k, idx) in eval_range.enumerate() {
        let a = series.values()[idx];
        if a.is_finite() {
            actual.push(a);
            predicted.push(forecast.point[k]);
        }
    }
    if actual.is_empty() {
        return Err(Error::Data("no observed actuals in evaluation range".into()));
    }
    let m = match mape_epsilon {
        Some(eps) => mape_with_epsilon(&actual, &predicted, eps)?,
        None => mape(&actual, &predicted)?,
    };
    Ok((m, rmse(&actual, &predicted)?))
}

/// Runs the harness: per split, fits every spec on train-minus-validation,
/// scores on validation, picks the best by validation MAPE (ties to the
/// earliest spec), refits on the full training range and scores on test.
pub fn run_cv(
    series: &TimeSeries,
    regressors: &RegressorTable,
    spec_grid: &[ModelSpec],
    config: &CvConfig,
    mape_epsilon: Option<f64>,
) -> Result<CvReport> {
    if spec_grid.is_empty() {
        return Err(Error::Config("spec grid must not be empty".into()));
    }
    let splits = make_splits(series.len(), config)?;
    let clock = Instant::now();
    let mut results = Vec::new();
    let mut failures = Vec::new();

    for (s, split) in splits.iter().enumerate() {
        let split_clock = Instant::now();
        // Selection on the validation fold; ties go to the earliest spec.
        let mut best: Option<(usize, f64)> = None;
        for (g, spec) in spec_grid.iter().enumerate() {
            match score_range(
                series,
                regressors,
                spec,
                split.train.start..split.validation.start,
                split.validation.clone(),
                mape_epsilon,
            ) {
                Ok((val_mape, _)) => {
                    if best.is_none_or(|(_, b)| val_mape < b) {
                        best = Some((g, val_mape));
                    }
                }
                Err(e) => failures.push(CvFailure {
                    split: s,
                    spec: g,
                    stage: "validation".into(),
                    message: e.to_string(),
                }),
            }
        }
        let Some((chosen, val_mape)) = best else {
            continue;
        };
        // Refit on the full training range; score on test.
        match score_range(
            series,
            regressors,
            &spec_grid[chosen],
            split.train.clone(),
            split.test.clone(),
            mape_epsilon,
        ) {
            Ok((test_mape, test_rmse)) => results.push(SplitResult {
                split: s,
                chosen_spec: chosen,
                train: split.train.clone(),
                validation: split.validation.clone(),
                test: split.test.clone(),
                val_mape,
                test_mape,
                test_rmse,
                runtime_seconds: split_clock.elapsed().as_secs_f64(),
            }),
            Err(e) => failures.push(CvFailure {
                split: s,
                spec: chosen,
                stage: "test".into(),
                message: e.to_string(),
            }),
        }
    }

    if results.is_empty() {
        return Err(Error::Numeric(format!(
            "every (spec, split) combination failed; first failure: {}",
            failures
                .first()
                .map_or("none recorded".to_string(), |f| f.message.clone())
        )));
    }
    let mapes: Vec<f64> = results.iter().map(|r| r.test_mape).collect();
    let rmses: Vec<f64> = results.iter().map(|r| r.test_rmse).collect();
    let (test_mape_mean, test_mape_sd) = mean_sd(&mapes);
    let (test_rmse_mean, test_rmse_sd) = mean_sd(&rmses);
    Ok(CvReport {
        splits: results,
        failures,
        test_mape_mean,
        test_mape_sd,
        test_rmse_mean,
        test_rmse_sd,
        total_runtime_seconds: clock.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::{FourierSpec, PhaseFeature};
    use crate::mean_model::{Algorithm, GrowthChoice};
    use crate::timebase::{parse_timestamp, Frequency};
    use chrono::{Datelike, Duration};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::collections::HashSet;
    use std::f64::consts::PI;

    fn daily_series(start: &str, values: Vec<f64>) -> TimeSeries {
        let start = parse_timestamp(start).unwrap();
        let timestamps: Vec<_> = (0..values.len() as i64)
            .map(|i| start + Duration::days(i))
            .collect();
        TimeSeries::new(timestamps, values, Frequency::Daily).unwrap()
    }

    #[test]
    fn mape_basics() {
        assert_eq!(mape(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let m = mape(&[100.0, 200.0], &[110.0, 180.0]).unwrap();
        assert!((m - 10.0).abs() < 1e-12);
        assert!(mape(&[1.0, 0.0], &[1.0, 1.0]).is_err());
        // Epsilon variant substitutes the denominator.
        let m = mape_with_epsilon(&[0.0], &[1.0], 2.0).unwrap();
        assert!((m - 50.0).abs() < 1e-12);
    }

    #[test]
    fn rmse_basics() {
        assert_eq!(rmse(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        let r = rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-12);
        let r = rmse(&[5.0, 6.0, 7.0], &[3.0, 4.0, 5.0]).unwrap();
        assert!((r - 2.0).abs() < 1e-12);
        assert!(rmse(&[], &[]).is_err());
    }

    fn table1_config() -> CvConfig {
        CvConfig {
            horizon: 7,
            min_train_periods: 730,
            periods_between_splits: 25,
            num_splits: 16,
            expanding_window: true,
        }
    }

    #[test]
    fn table1_daily_geometry() {
        let splits = make_splits(1500, &table1_config()).unwrap();
        assert_eq!(splits.len(), 16);
        // Last test ends at the series end.
        assert_eq!(splits.last().unwrap().test.end, 1500);
        // Test starts are 25 apart.
        for w in splits.windows(2) {
            assert_eq!(w[1].test.start - w[0].test.start, 25);
        }
        // Starts span more than a year.
        let span = splits.last().unwrap().test.start - splits[0].test.start;
        assert!(span > 365);
        for s in &splits {
            assert_eq!(s.test.len(), 7);
            assert_eq!(s.validation.len(), 7);
            assert!(s.train.end <= s.test.start);
            assert!(s.train.len() >= 730);
            assert_eq!(s.train.start, 0);
            assert_eq!(s.validation.end, s.test.start);
        }
    }

    #[test]
    fn test_starts_randomize_day_of_week() {
        let splits = make_splits(1500, &table1_config()).unwrap();
        let start = parse_timestamp("2015-01-01").unwrap();
        let dows: HashSet<u32> = splits
            .iter()
            .map(|s| {
                (start + Duration::days(s.test.start as i64))
                    .weekday()
                    .num_days_from_sunday()
            })
            .collect();
        assert!(dows.len() >= 6, "only {} distinct days of week", dows.len());
    }

    #[test]
    fn rolling_window_uses_fixed_train_length() {
        let config = CvConfig {
            expanding_window: false,
            ..table1_config()
        };
        let splits = make_splits(1500, &config).unwrap();
        for s in &splits {
            assert_eq!(s.train.len(), 730);
        }
    }

    #[test]
    fn infeasible_config_rejected() {
        let config = CvConfig {
            horizon: 7,
            min_train_periods: 1490,
            periods_between_splits: 25,
            num_splits: 16,
            expanding_window: true,
        };
        assert!(make_splits(1500, &config).is_err());
    }

    fn linear_weekly_values(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|i| {
                let dow = (i + 4) % 7;
                50.0 + 0.02 * i as f64
                    + 5.0 * (2.0 * PI * dow as f64 / 7.0).sin()
                    + normal.sample(&mut rng)
            })
            .collect()
    }

    fn linear_spec() -> ModelSpec {
        ModelSpec {
            growth: GrowthChoice::Fixed {
                exponent: 1.0,
                changepoints: vec![],
            },
            seasonality: vec![FourierSpec::new(PhaseFeature::Tow, 2)],
            algorithm: Algorithm::Ols,
            ..ModelSpec::default()
        }
    }

    fn quadratic_spec() -> ModelSpec {
        ModelSpec {
            growth: GrowthChoice::Fixed {
                exponent: 2.0,
                changepoints: vec![],
            },
            ..linear_spec()
        }
    }

    #[test]
    fn single_spec_grid_always_chosen() {
        let series = daily_series("2015-01-01", linear_weekly_values(900, 1));
        let config = CvConfig {
            horizon: 7,
            min_train_periods: 400,
            periods_between_splits: 25,
            num_splits: 4,
            expanding_window: true,
        };
        let report = run_cv(
            &series,
            &RegressorTable::new(),
            &[linear_spec()],
            &config,
            None,
        )
        .unwrap();
        assert_eq!(report.splits.len(), 4);
        assert!(report.splits.iter().all(|s| s.chosen_spec == 0));
        // Aggregate equals the mean of split MAPEs exactly.
        let mean =
            report.splits.iter().map(|s| s.test_mape).sum::<f64>() / report.splits.len() as f64;
        assert!((report.test_mape_mean - mean).abs() < 1e-12);
    }

    #[test]
    fn linear_truth_prefers_linear_spec() {
        let series = daily_series("2015-01-01", linear_weekly_values(900, 2));
        let config = CvConfig {
            horizon: 7,
            min_train_periods: 400,
            periods_between_splits: 30,
            num_splits: 5,
            expanding_window: true,
        };
        let report = run_cv(
            &series,
            &RegressorTable::new(),
            &[linear_spec(), quadratic_spec()],
            &config,
            None,
        )
        .unwrap();
        let linear_wins = report.splits.iter().filter(|s| s.chosen_spec == 0).count();
        assert!(
            linear_wins * 2 > report.splits.len(),
            "linear spec won only {linear_wins} of {} splits",
            report.splits.len()
        );
    }

    #[test]
    fn failing_spec_is_recorded_not_fatal() {
        let series = daily_series("2015-01-01", linear_weekly_values(900, 3));
        // A spec whose changepoint lies outside every training slice fails.
        let bad = ModelSpec {
            growth: GrowthChoice::Fixed {
                exponent: 1.0,
                changepoints: vec![parse_timestamp("2030-01-01").unwrap()],
            },
            ..linear_spec()
        };
        let config = CvConfig {
            horizon: 7,
            min_train_periods: 400,
            periods_between_splits: 30,
            num_splits: 3,
            expanding_window: true,
        };
        let report = run_cv(
            &series,
            &RegressorTable::new(),
            &[bad.clone(), linear_spec()],
            &config,
            None,
        )
        .unwrap();
        assert!(!report.failures.is_empty());
        assert!(report.splits.iter().all(|s| s.chosen_spec == 1));
        // All specs failing is an error.
        let err = run_cv(&series, &RegressorTable::new(), &[bad], &config, None);
        assert!(err.is_err());
    }

    #[test]
    fn no_leakage_by_construction() {
        let splits = make_splits(1200, &table1_config()).unwrap();
        for s in &splits {
            // Training and validation data end strictly before the test start.
            assert!(s.train.end <= s.test.start);
            assert!(s.validation.end <= s.test.start);
        }
    }
}
