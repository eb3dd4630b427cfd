//! Command implementations behind the `driftline` binary: configuration
//! loading, ingestion, and the forecast / detect-changepoints / decompose /
//! benchmark commands with deterministic CSV outputs.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::changepoint::{detect_seasonality_changepoints, SeasonalityCpConfig, TrendCpConfig};
use crate::error::{Error, Result};
use crate::eval::{run_cv, CvConfig};
use crate::mean_model::{fit, FittedModel, GrowthChoice, ModelSpec, SeasonalityCpChoice};
use crate::timebase::{format_timestamp, read_series_csv, Frequency, RegressorTable, TimeSeries};
use crate::volatility::{VolFeature, VolatilityConfig};

/// Top-level run configuration, loaded from a JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Input series CSV path (relative paths resolve against the config
    /// file's directory).
    pub input: String,
    #[serde(default = "default_ts_column")]
    pub ts_column: String,
    #[serde(default = "default_value_column")]
    pub value_column: String,
    pub frequency: Frequency,
    #[serde(default)]
    pub model: ModelSpec,
    /// Candidate specs for `benchmark`; falls back to `[model]` when empty.
    #[serde(default)]
    pub grid: Vec<ModelSpec>,
    #[serde(default)]
    pub volatility: Option<VolatilityConfig>,
    #[serde(default)]
    pub cv: Option<CvConfig>,
    /// CSV with future regressor values for `forecast` (ts column plus one
    /// column per regressor).
    #[serde(default)]
    pub future_regressors: Option<String>,
    #[serde(default)]
    pub output_dir: Option<String>,
    /// Recorded for reproducibility; the pipeline itself is deterministic.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub mape_epsilon: Option<f64>,
}

fn default_ts_column() -> String {
    "ts".into()
}

fn default_value_column() -> String {
    "y".into()
}

/// Command-line overrides applied on top of the config document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub coverage: Option<f64>,
    pub volatility_features: Option<Vec<String>>,
    pub mape_epsilon: Option<f64>,
}

/// Loads and validates a config document, applying overrides.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<(RunConfig, PathBuf)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("config parse failure in {}: {e}", path.display())))?;
    config.model.validate()?;
    for spec in &config.grid {
        spec.validate()?;
    }
    if let Some(seed) = overrides.seed {
        config.seed = Some(seed);
    }
    if let Some(eps) = overrides.mape_epsilon {
        config.mape_epsilon = Some(eps);
    }
    if overrides.coverage.is_some() || overrides.volatility_features.is_some() {
        let mut vol = config.volatility.take().unwrap_or_default();
        if let Some(c) = overrides.coverage {
            vol.coverage = c;
        }
        if let Some(features) = &overrides.volatility_features {
            vol.features = features
                .iter()
                .map(|f| VolFeature::parse(f))
                .collect::<Result<_>>()?;
        }
        config.volatility = Some(vol);
    }
    if let Some(v) = &config.volatility {
        v.validate()?;
    }
    if let Some(cv) = &config.cv {
        cv.validate()?;
    }
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let out_dir = overrides
        .output_dir
        .clone()
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((config, resolve_against(&base, &out_dir)))
}

fn resolve_against(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn config_base(config_path: &Path) -> PathBuf {
    config_path.parent().unwrap_or(Path::new(".")).to_path_buf()
}

/// Reads the input series (and regressor columns) named by the config.
pub fn load_input(config: &RunConfig, config_path: &Path) -> Result<(TimeSeries, RegressorTable)> {
    let input = resolve_against(&config_base(config_path), Path::new(&config.input));
    read_series_csv(
        &input,
        &config.ts_column,
        &config.value_column,
        config.frequency,
    )
}

/// Fixed-significant-digit decimal formatting (no exponent notation), so
/// CSV outputs are byte-identical across runs.
pub fn format_significant(x: f64, digits: u32) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (digits as i32 - 1 - mag).max(0) as usize;
    format!("{:.*}", decimals, x)
}

fn fmt(x: f64) -> String {
    format_significant(x, 10)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

/// Reads future regressor values: a CSV with the config's ts column plus
/// one column per regressor name.
fn read_future_regressors(
    config: &RunConfig,
    config_path: &Path,
    horizon: usize,
) -> Result<RegressorTable> {
    let Some(rel) = &config.future_regressors else {
        return Ok(RegressorTable::new());
    };
    let path = resolve_against(&config_base(config_path), Path::new(rel));
    let mut reader = csv::Reader::from_path(&path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("bad header in {}: {e}", path.display())))?
        .clone();
    let mut columns: Vec<(String, Vec<f64>)> = headers
        .iter()
        .filter(|h| *h != config.ts_column)
        .map(|h| (h.to_string(), Vec::new()))
        .collect();
    for (row_no, record) in reader.records().enumerate() {
        let line = row_no + 2;
        let record = record.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        let mut col_iter = 0;
        for (i, field) in record.iter().enumerate() {
            if headers.get(i) == Some(config.ts_column.as_str()) {
                continue;
            }
            let v: f64 = field.trim().parse().map_err(|e| {
                Error::Data(format!("line {line}: bad value '{field}': {e}"))
            })?;
            columns[col_iter].1.push(v);
            col_iter += 1;
        }
    }
    let mut table = RegressorTable::new();
    for (name, mut values) in columns {
        if values.len() < horizon {
            return Err(Error::Data(format!(
                "future regressor '{name}' has {} rows, horizon needs {horizon}",
                values.len()
            )));
        }
        // Row k maps to forecast step k.
        values.truncate(horizon);
        table.push(name, values)?;
    }
    Ok(table)
}

/// `forecast`: fit, attach volatility when configured, predict `horizon`
/// periods, and write forecast.csv, components.csv and model.json.
pub fn cmd_forecast(
    config: &RunConfig,
    config_path: &Path,
    out_dir: &Path,
    horizon: usize,
) -> Result<Vec<PathBuf>> {
    let (series, regressors) = load_input(config, config_path)?;
    let mut model = fit(&series, &regressors, &config.model)?;
    if let Some(vol) = &config.volatility {
        model.fit_volatility(vol)?;
    }
    let future = read_future_regressors(config, config_path, horizon)?;
    let forecast = model.predict(horizon, &future)?;

    let mut out = String::new();
    let with_intervals = forecast.lower.is_some();
    if with_intervals {
        out.push_str("ts,yhat,yhat_lower,yhat_upper\n");
    } else {
        out.push_str("ts,yhat\n");
    }
    for (i, ts) in forecast.timestamps.iter().enumerate() {
        out.push_str(&format_timestamp(*ts));
        out.push(',');
        out.push_str(&fmt(forecast.point[i]));
        if with_intervals {
            out.push(',');
            out.push_str(&fmt(forecast.lower.as_ref().unwrap()[i]));
            out.push(',');
            out.push_str(&fmt(forecast.upper.as_ref().unwrap()[i]));
        }
        out.push('\n');
    }
    let forecast_path = out_dir.join("forecast.csv");
    write_file(&forecast_path, &out)?;

    let components_path = out_dir.join("components.csv");
    write_file(
        &components_path,
        &components_csv(&forecast.timestamps, &forecast.components),
    )?;

    let model_path = out_dir.join("model.json");
    write_file(&model_path, &model.to_json()?)?;
    Ok(vec![forecast_path, components_path, model_path])
}

fn components_csv(
    timestamps: &[chrono::NaiveDateTime],
    table: &crate::mean_model::ComponentTable,
) -> String {
    let mut out = String::from("ts");
    for h in &table.headers {
        out.push(',');
        out.push_str(h);
    }
    out.push('\n');
    for (ts, row) in timestamps.iter().zip(&table.rows) {
        out.push_str(&format_timestamp(*ts));
        for v in row {
            out.push(',');
            out.push_str(&fmt(*v));
        }
        out.push('\n');
    }
    out
}

/// `detect-changepoints`: trend detection (always) plus seasonality
/// detection when the model spec asks for it; writes changepoints.csv with
/// columns `instant,kind,component,magnitude`.
pub fn cmd_detect_changepoints(
    config: &RunConfig,
    config_path: &Path,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let (series, _) = load_input(config, config_path)?;
    let trend_config = match &config.model.growth {
        GrowthChoice::Auto {
            changepoint_config: Some(c),
            ..
        } => c.clone(),
        _ => TrendCpConfig::defaults_for(series.frequency()),
    };
    let trend = crate::changepoint::detect_trend_changepoints(&series, &trend_config)?;

    let mut out = String::from("instant,kind,component,magnitude\n");
    for (instant, magnitude) in trend.instants.iter().zip(&trend.magnitudes) {
        out.push_str(&format!(
            "{},trend,,{}\n",
            format_timestamp(*instant),
            fmt(*magnitude)
        ));
    }

    if matches!(
        config.model.seasonality_changepoints,
        SeasonalityCpChoice::Auto
    ) && !config.model.seasonality.is_empty()
    {
        let mut seas_config = config
            .model
            .seasonality_changepoint_config
            .clone()
            .unwrap_or_else(|| {
                SeasonalityCpConfig::defaults_for(
                    series.frequency(),
                    config.model.seasonality.clone(),
                )
            });
        if seas_config.components.is_empty() {
            seas_config.components = config.model.seasonality.clone();
        }
        seas_config.trend_changepoints = trend.instants.clone();
        for scp in detect_seasonality_changepoints(&series, &seas_config)? {
            out.push_str(&format!(
                "{},seasonality,{},\n",
                format_timestamp(scp.instant),
                scp.component
            ));
        }
    }

    let path = out_dir.join("changepoints.csv");
    write_file(&path, &out)?;
    Ok(vec![path])
}

/// `decompose`: fit (or load a saved model) and write the additive
/// component table over the training span.
pub fn cmd_decompose(
    config: &RunConfig,
    config_path: &Path,
    out_dir: &Path,
    model_path: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let model = match model_path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Data(format!("cannot read model {}: {e}", p.display())))?;
            FittedModel::from_json(&text)?
        }
        None => {
            let (series, regressors) = load_input(config, config_path)?;
            fit(&series, &regressors, &config.model)?
        }
    };
    let timestamps = model.train_timestamps();
    let table = model.decompose(&timestamps)?;
    let path = out_dir.join("components.csv");
    write_file(&path, &components_csv(&timestamps, &table))?;
    Ok(vec![path])
}

/// `benchmark`: rolling-window cross-validation over the spec grid; writes
/// report.csv with one row per split plus an aggregate row.
pub fn cmd_benchmark(
    config: &RunConfig,
    config_path: &Path,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let (series, regressors) = load_input(config, config_path)?;
    let cv = config.cv.clone().ok_or_else(|| {
        Error::Config("benchmark needs a 'cv' section in the config".into())
    })?;
    let grid: Vec<ModelSpec> = if config.grid.is_empty() {
        vec![config.model.clone()]
    } else {
        config.grid.clone()
    };
    let report = run_cv(&series, &regressors, &grid, &cv, config.mape_epsilon)?;

    let ts_of = |idx: usize| -> String {
        format_timestamp(series.timestamps()[idx])
    };
    let mut out = String::from(
        "split,spec_id,train_start,train_end,test_start,test_end,val_mape,test_mape,\
         test_rmse,runtime_seconds\n",
    );
    for s in &report.splits {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            s.split,
            s.chosen_spec,
            ts_of(s.train.start),
            ts_of(s.train.end - 1),
            ts_of(s.test.start),
            ts_of(s.test.end - 1),
            fmt(s.val_mape),
            fmt(s.test_mape),
            fmt(s.test_rmse),
            fmt(s.runtime_seconds),
        ));
    }
    out.push_str(&format!(
        "aggregate,,,,,,,{},{},{}\n",
        fmt(report.test_mape_mean),
        fmt(report.test_rmse_mean),
        fmt(report.total_runtime_seconds),
    ));
    for f in &report.failures {
        log::warn!(
            "benchmark: spec {} failed on split {} during {}: {}",
            f.spec,
            f.split,
            f.stage,
            f.message
        );
    }
    let path = out_dir.join("report.csv");
    write_file(&path, &out)?;
    Ok(vec![path])
}
