//! Conditional residual quantiles by categorical feature combination.
//!
//! Residuals from the mean model are split by a tuple of categorical
//! features (day of week, is-event, ...). Combinations with enough samples
//! get their own quantile bounds; small combinations borrow the bounds of a
//! high-IQR combination so intervals stay conservative. The point forecast
//! is never modified.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::timebase::{EventWindow, RawFeatureRow};

/// Categorical conditioning features available to the volatility model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolFeature {
    /// Day of week, 0-6 (Sunday = 0).
    Dow,
    /// Hour of day, 0-23.
    Hour,
    /// Month, 1-12.
    Month,
    /// Whether any event window covers the timestamp (0/1).
    IsEvent,
}

impl VolFeature {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dow" => Ok(VolFeature::Dow),
            "hour" => Ok(VolFeature::Hour),
            "month" => Ok(VolFeature::Month),
            "is_event" => Ok(VolFeature::IsEvent),
            other => Err(Error::Config(format!(
                "unknown volatility feature '{other}' (expected dow, hour, month or is_event)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            VolFeature::Dow => "dow",
            VolFeature::Hour => "hour",
            VolFeature::Month => "month",
            VolFeature::IsEvent => "is_event",
        }
    }
}

/// Evaluates the feature tuple for one timestamp.
pub fn feature_tuple(
    features: &[VolFeature],
    raw: &RawFeatureRow,
    windows: &[EventWindow],
    ts: chrono::NaiveDateTime,
) -> Vec<i64> {
    use chrono::{Datelike, Timelike};
    features
        .iter()
        .map(|f| match f {
            VolFeature::Dow => raw.dow as i64,
            VolFeature::Hour => ts.hour() as i64,
            VolFeature::Month => ts.month() as i64,
            VolFeature::IsEvent => i64::from(!windows.is_empty()),
        })
        .collect()
}

/// Residual distribution family per combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolDistribution {
    /// Sample quantiles with linear interpolation between order statistics.
    Empirical,
    /// Normal with the mean forced to zero; sigma is the residual RMS.
    GaussianZeroMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityConfig {
    pub features: Vec<VolFeature>,
    /// Minimum combination sample size N; smaller combinations fall back.
    pub min_samples: usize,
    /// Percentile p used to pick the fallback combination by IQR.
    pub fallback_percentile: f64,
    /// Central interval coverage level.
    pub coverage: f64,
    pub distribution: VolDistribution,
}

impl Default for VolatilityConfig {
    fn default() -> Self {
        VolatilityConfig {
            features: vec![VolFeature::Dow],
            min_samples: 20,
            fallback_percentile: 0.9,
            coverage: 0.95,
            distribution: VolDistribution::Empirical,
        }
    }
}

impl VolatilityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_samples < 2 {
            return Err(Error::Config("volatility min_samples must be >= 2".into()));
        }
        if !(self.coverage > 0.0 && self.coverage < 1.0) {
            return Err(Error::Config(format!(
                "coverage must be in (0, 1), got {}",
                self.coverage
            )));
        }
        if !(self.fallback_percentile > 0.0 && self.fallback_percentile <= 1.0) {
            return Err(Error::Config(format!(
                "fallback percentile must be in (0, 1], got {}",
                self.fallback_percentile
            )));
        }
        if self.features.is_empty() {
            return Err(Error::Config(
                "volatility model needs at least one conditioning feature".into(),
            ));
        }
        Ok(())
    }
}

/// Quantile bounds for one feature combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComboRecord {
    pub key: Vec<i64>,
    pub sample_size: usize,
    pub q_lower: f64,
    pub q_upper: f64,
    pub iqr: f64,
    /// Whether the bounds were borrowed from the fallback combination.
    pub used_fallback: bool,
}

/// Fitted volatility table: per-combination bounds plus the fallback record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityTable {
    pub records: Vec<ComboRecord>,
    pub fallback_key: Vec<i64>,
    pub fallback_lower: f64,
    pub fallback_upper: f64,
    pub coverage: f64,
    pub features: Vec<VolFeature>,
}

impl VolatilityTable {
    pub fn lookup(&self, key: &[i64]) -> Option<&ComboRecord> {
        self.records.iter().find(|r| r.key == key)
    }
}

/// Sample quantile with linear interpolation between order statistics:
/// with sorted values x_(0..n-1), h = (n - 1) q, the result is
/// x_(floor h) + (h - floor h) (x_(floor h + 1) - x_(floor h)).
pub fn sample_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Data("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("quantile level {q} outside [0, 1]")));
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
    } else {
        Ok(sorted[lo])
    }
}

/// Standard normal quantile (Acklam's rational approximation, relative
/// error below 1.2e-9).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("normal quantile level {p} outside (0, 1)")));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    Ok(x)
}

/// IQR of the standard normal in sigma units: 2 * Phi^-1(0.75).
fn normal_iqr_factor() -> f64 {
    2.0 * normal_quantile(0.75).expect("0.75 in range")
}

/// Fits the volatility table from residuals and aligned feature tuples.
///
/// Combinations with at least `min_samples` residuals get quantile bounds
/// from the configured distribution; the `fallback_percentile`-th combination
/// of the ascending IQR ordering (ties broken toward larger sample size)
/// supplies bounds for the rest.
pub fn fit_volatility(
    residuals: &[f64],
    features: &[Vec<i64>],
    config: &VolatilityConfig,
) -> Result<VolatilityTable> {
    config.validate()?;
    if residuals.len() != features.len() {
        return Err(Error::Data(format!(
            "residuals ({}) and feature tuples ({}) differ in length",
            residuals.len(),
            features.len()
        )));
    }
    let mut groups: BTreeMap<Vec<i64>, Vec<f64>> = BTreeMap::new();
    for (r, key) in residuals.iter().zip(features) {
        if r.is_finite() {
            groups.entry(key.clone()).or_default().push(*r);
        }
    }

    let alpha = 1.0 - config.coverage;
    let (p_lo, p_hi) = (alpha / 2.0, 1.0 - alpha / 2.0);

    struct Large {
        key: Vec<i64>,
        n: usize,
        lower: f64,
        upper: f64,
        iqr: f64,
    }
    let mut larges: Vec<Large> = Vec::new();
    let mut smalls: Vec<(Vec<i64>, usize, f64)> = Vec::new(); // key, n, own iqr

    for (key, vals) in &groups {
        let n = vals.len();
        if n >= config.min_samples {
            let (lower, upper, iqr) = match config.distribution {
                VolDistribution::Empirical => (
                    sample_quantile(vals, p_lo)?,
                    sample_quantile(vals, p_hi)?,
                    sample_quantile(vals, 0.75)? - sample_quantile(vals, 0.25)?,
                ),
                VolDistribution::GaussianZeroMean => {
                    // Mean forced to zero: sigma is the root mean square.
                    let sigma = (vals.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
                    let z = normal_quantile(p_hi)?;
                    (-z * sigma, z * sigma, normal_iqr_factor() * sigma)
                }
            };
            larges.push(Large {
                key: key.clone(),
                n,
                lower,
                upper,
                iqr,
            });
        } else {
            let own_iqr = if n >= 2 {
                sample_quantile(vals, 0.75)? - sample_quantile(vals, 0.25)?
            } else {
                0.0
            };
            smalls.push((key.clone(), n, own_iqr));
        }
    }

    if larges.is_empty() {
        return Err(Error::Data(format!(
            "no feature combination reaches {} residuals; use coarser volatility features",
            config.min_samples
        )));
    }

    // Ascending IQR, ties resolved toward the larger sample.
    let mut order: Vec<usize> = (0..larges.len()).collect();
    order.sort_by(|&a, &b| {
        larges[a]
            .iqr
            .partial_cmp(&larges[b].iqr)
            .unwrap()
            .then(larges[b].n.cmp(&larges[a].n))
            .then(larges[a].key.cmp(&larges[b].key))
    });
    let m = order.len();
    let idx = ((config.fallback_percentile * m as f64).ceil() as usize).max(1) - 1;
    let c0 = &larges[order[idx.min(m - 1)]];
    let (fallback_key, fallback_lower, fallback_upper) =
        (c0.key.clone(), c0.lower, c0.upper);

    let mut records: Vec<ComboRecord> = larges
        .iter()
        .map(|l| ComboRecord {
            key: l.key.clone(),
            sample_size: l.n,
            q_lower: l.lower,
            q_upper: l.upper,
            iqr: l.iqr,
            used_fallback: false,
        })
        .collect();
    for (key, n, own_iqr) in smalls {
        records.push(ComboRecord {
            key,
            sample_size: n,
            q_lower: fallback_lower,
            q_upper: fallback_upper,
            iqr: own_iqr,
            used_fallback: true,
        });
    }
    records.sort_by(|a, b| a.key.cmp(&b.key));

    Ok(VolatilityTable {
        records,
        fallback_key,
        fallback_lower,
        fallback_upper,
        coverage: config.coverage,
        features: config.features.clone(),
    })
}

/// Adds the combination quantile offsets to each point forecast. Unseen
/// combinations get the fallback bounds with a logged warning. The point
/// forecasts themselves are never modified.
pub fn interval(
    table: &VolatilityTable,
    point_forecasts: &[f64],
    feature_tuples: &[Vec<i64>],
    coverage: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if (coverage - table.coverage).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "requested coverage {coverage} differs from the fitted coverage {}",
            table.coverage
        )));
    }
    if point_forecasts.len() != feature_tuples.len() {
        return Err(Error::Data(
            "point forecasts and feature tuples differ in length".into(),
        ));
    }
    let mut warned: Vec<Vec<i64>> = Vec::new();
    let mut lower = Vec::with_capacity(point_forecasts.len());
    let mut upper = Vec::with_capacity(point_forecasts.len());
    for (p, key) in point_forecasts.iter().zip(feature_tuples) {
        let (lo, hi) = match table.lookup(key) {
            Some(rec) => (rec.q_lower, rec.q_upper),
            None => {
                if !warned.contains(key) {
                    log::warn!(
                        "volatility combination {key:?} unseen at fit time; using fallback bounds"
                    );
                    warned.push(key.clone());
                }
                (table.fallback_lower, table.fallback_upper)
            }
        };
        lower.push(p + lo);
        upper.push(p + hi);
    }
    Ok((lower, upper))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn config(features: Vec<VolFeature>) -> VolatilityConfig {
        VolatilityConfig {
            features,
            ..VolatilityConfig::default()
        }
    }

    #[test]
    fn quantile_interpolation_rule() {
        // Independent check of the interpolation rule on a tiny sample.
        let vals = [-2.0, -1.0, 0.0, 1.0, 2.0];
        // h = 4 * 0.025 = 0.1 -> -2.0 + 0.1 * 1.0 = -1.9
        assert!((sample_quantile(&vals, 0.025).unwrap() + 1.9).abs() < 1e-12);
        assert!((sample_quantile(&vals, 0.975).unwrap() - 1.9).abs() < 1e-12);
        assert_eq!(sample_quantile(&vals, 0.5).unwrap(), 0.0);
        assert_eq!(sample_quantile(&vals, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn single_combination_bounds_match_sample_quantiles() {
        let residuals = vec![-2.0, -1.0, 0.0, 1.0, 2.0];
        let features = vec![vec![0]; 5];
        let cfg = VolatilityConfig {
            min_samples: 2,
            ..config(vec![VolFeature::Dow])
        };
        let table = fit_volatility(&residuals, &features, &cfg).unwrap();
        let rec = table.lookup(&[0]).unwrap();
        assert!((rec.q_lower - sample_quantile(&residuals, 0.025).unwrap()).abs() < 1e-12);
        assert!((rec.q_upper - sample_quantile(&residuals, 0.975).unwrap()).abs() < 1e-12);
        assert!(!rec.used_fallback);
    }

    #[test]
    fn small_combination_gets_fallback_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut residuals = Vec::new();
        let mut features = Vec::new();
        // One large combination (n = 100) and one small (n = 19 = N - 1).
        for _ in 0..100 {
            residuals.push(normal.sample(&mut rng));
            features.push(vec![0]);
        }
        for _ in 0..19 {
            residuals.push(10.0 * normal.sample(&mut rng));
            features.push(vec![1]);
        }
        let table = fit_volatility(&residuals, &features, &config(vec![VolFeature::Dow])).unwrap();
        let small = table.lookup(&[1]).unwrap();
        assert!(small.used_fallback);
        assert_eq!(small.q_lower, table.fallback_lower);
        assert_eq!(small.q_upper, table.fallback_upper);
        assert_eq!(table.fallback_key, vec![0]);
    }

    #[test]
    fn gaussian_zero_mean_bounds() {
        let residuals = vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0,
                             1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let features = vec![vec![0]; 20];
        let cfg = VolatilityConfig {
            distribution: VolDistribution::GaussianZeroMean,
            ..config(vec![VolFeature::Dow])
        };
        let table = fit_volatility(&residuals, &features, &cfg).unwrap();
        let rec = table.lookup(&[0]).unwrap();
        // sigma = 1; 95% coverage gives +-1.959964...
        assert!((rec.q_upper - 1.959964).abs() < 1e-5);
        assert!((rec.q_lower + 1.959964).abs() < 1e-5);
    }

    #[test]
    fn normal_quantile_reference_values() {
        assert!((normal_quantile(0.975).unwrap() - 1.959963985).abs() < 1e-6);
        assert!((normal_quantile(0.5).unwrap()).abs() < 1e-9);
        assert!((normal_quantile(0.025).unwrap() + 1.959963985).abs() < 1e-6);
        assert!(normal_quantile(0.0).is_err());
    }

    #[test]
    fn interval_offsets_are_additive() {
        let table = VolatilityTable {
            records: vec![ComboRecord {
                key: vec![3],
                sample_size: 50,
                q_lower: -5.0,
                q_upper: 7.0,
                iqr: 6.0,
                used_fallback: false,
            }],
            fallback_key: vec![3],
            fallback_lower: -5.0,
            fallback_upper: 7.0,
            coverage: 0.95,
            features: vec![VolFeature::Dow],
        };
        let (lo, hi) = interval(&table, &[100.0], &[vec![3]], 0.95).unwrap();
        assert_eq!(lo, vec![95.0]);
        assert_eq!(hi, vec![107.0]);
        // Unseen combination falls back.
        let (lo, hi) = interval(&table, &[10.0], &[vec![9]], 0.95).unwrap();
        assert_eq!(lo, vec![5.0]);
        assert_eq!(hi, vec![17.0]);
        // Wrong coverage is rejected.
        assert!(interval(&table, &[1.0], &[vec![3]], 0.8).is_err());
    }

    #[test]
    fn degenerate_residuals_give_degenerate_intervals() {
        let residuals = vec![0.0; 30];
        let features = vec![vec![0]; 30];
        let table = fit_volatility(&residuals, &features, &config(vec![VolFeature::Dow])).unwrap();
        let (lo, hi) = interval(&table, &[42.0], &[vec![0]], 0.95).unwrap();
        assert_eq!(lo, vec![42.0]);
        assert_eq!(hi, vec![42.0]);
    }

    #[test]
    fn translation_equivariance_empirical() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let normal = Normal::new(0.0, 2.0).unwrap();
        let residuals: Vec<f64> = (0..200).map(|_| normal.sample(&mut rng)).collect();
        let features: Vec<Vec<i64>> = (0..200).map(|i| vec![(i % 3) as i64]).collect();
        let cfg = config(vec![VolFeature::Dow]);
        let base = fit_volatility(&residuals, &features, &cfg).unwrap();
        let shifted_res: Vec<f64> = residuals.iter().map(|r| r + 11.0).collect();
        let shifted = fit_volatility(&shifted_res, &features, &cfg).unwrap();
        for (a, b) in base.records.iter().zip(&shifted.records) {
            assert!((b.q_lower - a.q_lower - 11.0).abs() < 1e-9);
            assert!((b.q_upper - a.q_upper - 11.0).abs() < 1e-9);
        }
        assert_eq!(base.fallback_key, shifted.fallback_key);
    }

    #[test]
    fn all_small_combinations_error() {
        let residuals = vec![1.0; 10];
        let features: Vec<Vec<i64>> = (0..10).map(|i| vec![i as i64]).collect();
        let err = fit_volatility(&residuals, &features, &config(vec![VolFeature::Dow]))
            .unwrap_err();
        assert!(err.to_string().contains("coarser"));
    }

    #[test]
    fn fallback_iqr_at_least_percentile() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut residuals = Vec::new();
        let mut features = Vec::new();
        for c in 0..6 {
            let sigma = 0.5 + c as f64;
            let normal = Normal::new(0.0, sigma).unwrap();
            for _ in 0..40 {
                residuals.push(normal.sample(&mut rng));
                features.push(vec![c as i64]);
            }
        }
        let cfg = config(vec![VolFeature::Dow]);
        let table = fit_volatility(&residuals, &features, &cfg).unwrap();
        let mut iqrs: Vec<f64> = table
            .records
            .iter()
            .filter(|r| !r.used_fallback)
            .map(|r| r.iqr)
            .collect();
        iqrs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let p_quant = sample_quantile(&iqrs, cfg.fallback_percentile).unwrap();
        let fb = table.lookup(&table.fallback_key.clone()).unwrap();
        assert!(fb.iqr >= p_quant - 1e-9);
    }
}
