//! Phase 1: the conditional mean model.
//!
//! A declarative [`ModelSpec`] names the growth form, seasonality blocks,
//! events, lag structure, regressors and interactions; [`fit`] resolves
//! automatic changepoint detection, assembles the design matrix and fits
//! the configured algorithm. The resulting [`FittedModel`] predicts over a
//! horizon without refitting and decomposes forecasts into additive
//! component contributions.

use chrono::{Datelike, NaiveDateTime};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::changepoint::{
    detect_seasonality_changepoints, detect_trend_changepoints, ChangepointSet,
    SeasonalityChangepoint, SeasonalityCpConfig, TrendCpConfig,
};
use crate::error::{Error, Result};
use crate::featurize::{
    event_basis, fourier_terms, glob_match, growth_terms, interaction, interaction_categorical,
    Column, EventBasisSpec, Family, FeatureMatrix, FourierSpec, LagAccessLog, LagSpec,
};
use crate::solvers::{fit_penalized, fit_quantile, Penalty, PenaltySpec};
use crate::timebase::{
    format_timestamp, label_events, read_events_csv, time_features_at, years_since,
    EventOccurrence, Frequency, RegressorTable, TimeSeries,
};
use crate::volatility::{feature_tuple, fit_volatility, interval, VolatilityConfig, VolatilityTable};

/// Growth structure of the mean model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum GrowthChoice {
    /// No long-term growth term.
    #[default]
    Off,
    /// Run automatic trend changepoint detection at fit time.
    Auto {
        #[serde(default = "default_exponent")]
        exponent: f64,
        /// Full detection configuration; defaults for the series frequency
        /// when absent.
        #[serde(default)]
        changepoint_config: Option<TrendCpConfig>,
    },
    /// Fixed growth basis with user-supplied changepoints.
    Fixed {
        #[serde(default = "default_exponent")]
        exponent: f64,
        #[serde(default)]
        changepoints: Vec<NaiveDateTime>,
    },
}

fn default_exponent() -> f64 {
    1.0
}

/// Seasonality-changepoint handling.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeasonalityCpChoice {
    #[default]
    Off,
    Auto,
    Explicit(Vec<SeasonalityChangepoint>),
}

/// Recurring-event configuration: a database of occurrences (inline and/or
/// from a CSV path) plus the basis order per label.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventsConfig {
    #[serde(default)]
    pub db_path: Option<String>,
    #[serde(default)]
    pub occurrences: Vec<EventOccurrence>,
    #[serde(default)]
    pub expand_before_seconds: i64,
    #[serde(default)]
    pub expand_after_seconds: i64,
    pub bases: Vec<EventBasisSpec>,
}

/// Lags of a named regressor column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaggedRegressorSpec {
    pub name: String,
    pub lags: LagSpec,
}

/// Interaction between column selectors. `left` is a glob over column
/// names; `right` is either a glob or a categorical raw feature
/// (`cat:dow`, `cat:month`, `cat:is_weekend`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSpec {
    pub left: String,
    pub right: String,
}

/// Fitting algorithm for the conditional mean.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ols,
    #[default]
    Ridge,
    Lasso,
    /// Pinball-loss fit at the given level, for peak-oriented objectives.
    Quantile(f64),
}

impl Algorithm {
    /// Regularized fitters tolerate redundant one-hot encodings; the others
    /// get the first level dropped.
    pub fn is_regularized(&self) -> bool {
        matches!(self, Algorithm::Ridge | Algorithm::Lasso)
    }
}

/// Penalty strengths. `lambda1` is in the lasso convention of
/// [`crate::solvers::fit_lasso_cd`] (objective (1/(2n))||y-Xb||^2 +
/// lambda1 sum|b|), directly comparable to
/// [`crate::solvers::lambda_max`]. `lambda2` multiplies ||b||^2 next to the
/// plain sum of squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmParams {
    #[serde(default = "default_lambda2")]
    pub lambda2: f64,
    #[serde(default = "default_lambda1")]
    pub lambda1: f64,
}

fn default_lambda2() -> f64 {
    1.0
}

fn default_lambda1() -> f64 {
    0.01
}

impl Default for AlgorithmParams {
    fn default() -> Self {
        AlgorithmParams {
            lambda2: default_lambda2(),
            lambda1: default_lambda1(),
        }
    }
}

/// Declarative description of the conditional mean model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub growth: GrowthChoice,
    #[serde(default)]
    pub seasonality: Vec<FourierSpec>,
    #[serde(default)]
    pub seasonality_changepoints: SeasonalityCpChoice,
    #[serde(default)]
    pub seasonality_changepoint_config: Option<SeasonalityCpConfig>,
    #[serde(default)]
    pub events: Option<EventsConfig>,
    #[serde(default)]
    pub lags: Option<LagSpec>,
    #[serde(default)]
    pub regressors: Vec<String>,
    #[serde(default)]
    pub lagged_regressors: Vec<LaggedRegressorSpec>,
    #[serde(default)]
    pub interactions: Vec<InteractionSpec>,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub algorithm_params: AlgorithmParams,
    #[serde(default)]
    pub clip_at_zero: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match &self.growth {
            GrowthChoice::Off => {}
            GrowthChoice::Auto { exponent, .. } | GrowthChoice::Fixed { exponent, .. } => {
                crate::featurize::GrowthSpec {
                    exponent: *exponent,
                    changepoints: vec![],
                }
                .validate()?;
            }
        }
        let mut seen = Vec::new();
        for s in &self.seasonality {
            s.validate()?;
            if seen.contains(&s.phase_feature) {
                return Err(Error::Config(format!(
                    "duplicate seasonality block on '{}'",
                    s.phase_feature.name()
                )));
            }
            seen.push(s.phase_feature);
        }
        if let Some(events) = &self.events {
            for b in &events.bases {
                b.validate()?;
            }
        }
        if let Some(lags) = &self.lags {
            lags.validate()?;
        }
        for lr in &self.lagged_regressors {
            lr.lags.validate()?;
        }
        if let Algorithm::Quantile(tau) = self.algorithm {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::Config(format!(
                    "quantile level must be in (0, 1), got {tau}"
                )));
            }
        }
        Ok(())
    }

    /// Smallest lag used anywhere (target lags and lagged regressors);
    /// `None` when the model is lag-free.
    pub fn min_lag(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        let mut fold = |m: Option<usize>| {
            if let Some(v) = m {
                best = Some(best.map_or(v, |b| b.min(v)));
            }
        };
        if let Some(lags) = &self.lags {
            fold(lags.min_lag());
        }
        for lr in &self.lagged_regressors {
            fold(lr.lags.min_lag());
        }
        best
    }

    fn uses_lags(&self) -> bool {
        self.lags.as_ref().is_some_and(|l| !l.is_empty())
            || self.lagged_regressors.iter().any(|lr| !lr.lags.is_empty())
    }
}

/// Volatility model attached after Phase 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityModel {
    pub table: VolatilityTable,
    pub config: VolatilityConfig,
}

/// A fitted conditional mean model: coefficient table, resolved spec
/// snapshot, changepoint sets, training history (for lag features and
/// decomposition) and the optional volatility table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub frequency: Frequency,
    /// Continuous-time origin; equals the training start.
    pub origin: NaiveDateTime,
    pub train_start: NaiveDateTime,
    pub n_train: usize,
    #[serde(with = "crate::timebase::floats_with_nulls")]
    pub train_values: Vec<f64>,
    pub regressor_history: RegressorTable,
    pub coefficient_names: Vec<String>,
    pub coefficient_values: Vec<f64>,
    pub column_families: Vec<Family>,
    pub trend_changepoints: Option<ChangepointSet>,
    pub seasonality_changepoints: Vec<SeasonalityChangepoint>,
    pub volatility: Option<VolatilityModel>,
}

/// Additive component contributions per timestamp; the last column is the
/// total (the unclipped point forecast).
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Forecast over a horizon: point values, optional interval bounds, and the
/// component table.
#[derive(Debug, Clone)]
pub struct ForecastResult {
    pub timestamps: Vec<NaiveDateTime>,
    /// Final point forecast (clipped at zero when the spec says so).
    pub point: Vec<f64>,
    /// Point forecast before clipping; component contributions sum to this.
    pub point_raw: Vec<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub coverage: Option<f64>,
    pub components: ComponentTable,
}

/// Fits the conditional mean model: resolves automatic changepoints,
/// assembles the design matrix over the training span, and fits the
/// configured algorithm.
pub fn fit(
    series: &TimeSeries,
    regressors: &RegressorTable,
    spec: &ModelSpec,
) -> Result<FittedModel> {
    spec.validate()?;
    if !regressors.is_empty() && regressors.len_rows() != series.len() {
        return Err(Error::Data(format!(
            "regressor table has {} rows, series has {}",
            regressors.len_rows(),
            series.len()
        )));
    }
    for name in &spec.regressors {
        if regressors.get(name).is_none() {
            return Err(Error::Data(format!("regressor '{name}' not found in data")));
        }
    }
    for lr in &spec.lagged_regressors {
        if regressors.get(&lr.name).is_none() {
            return Err(Error::Data(format!(
                "lagged regressor '{}' not found in data",
                lr.name
            )));
        }
    }

    let mut resolved = spec.clone();
    let mut trend_set: Option<ChangepointSet> = None;

    // Resolve growth: automatic detection becomes a fixed spec.
    match &spec.growth {
        GrowthChoice::Auto {
            exponent,
            changepoint_config,
        } => {
            let config = changepoint_config
                .clone()
                .unwrap_or_else(|| TrendCpConfig::defaults_for(series.frequency()));
            let set = detect_trend_changepoints(series, &config)?;
            resolved.growth = GrowthChoice::Fixed {
                exponent: *exponent,
                changepoints: set.instants.clone(),
            };
            trend_set = Some(set);
        }
        GrowthChoice::Fixed { changepoints, .. } => {
            for cp in changepoints {
                if *cp < series.start() || *cp > series.end() {
                    return Err(Error::Config(format!(
                        "growth changepoint {cp} lies outside the series span"
                    )));
                }
            }
        }
        GrowthChoice::Off => {}
    }

    // Resolve events: inline any CSV database so the model is self-contained.
    if let Some(events) = &mut resolved.events {
        if let Some(path) = events.db_path.take() {
            let mut loaded = read_events_csv(Path::new(&path))?;
            events.occurrences.append(&mut loaded);
        }
    }

    // Resolve seasonality changepoints.
    if matches!(spec.seasonality_changepoints, SeasonalityCpChoice::Auto) {
        let mut config = resolved
            .seasonality_changepoint_config
            .clone()
            .unwrap_or_else(|| {
                SeasonalityCpConfig::defaults_for(series.frequency(), resolved.seasonality.clone())
            });
        if config.components.is_empty() {
            config.components = resolved.seasonality.clone();
        }
        if let GrowthChoice::Fixed { changepoints, .. } = &resolved.growth {
            config.trend_changepoints = changepoints.clone();
        }
        let found = detect_seasonality_changepoints(series, &config)?;
        resolved.seasonality_changepoints = SeasonalityCpChoice::Explicit(found);
    }
    if let SeasonalityCpChoice::Explicit(list) = &resolved.seasonality_changepoints {
        for scp in list {
            if !resolved
                .seasonality
                .iter()
                .any(|s| s.phase_feature.name() == scp.component)
            {
                return Err(Error::Config(format!(
                    "seasonality changepoint names component '{}' which has no \
                     seasonality block",
                    scp.component
                )));
            }
        }
    }

    let seasonality_cps: Vec<SeasonalityChangepoint> = match &resolved.seasonality_changepoints {
        SeasonalityCpChoice::Explicit(list) => list.clone(),
        _ => Vec::new(),
    };

    let mut model = FittedModel {
        spec: resolved,
        frequency: series.frequency(),
        origin: series.start(),
        train_start: series.start(),
        n_train: series.len(),
        train_values: series.values().to_vec(),
        regressor_history: regressors.clone(),
        coefficient_names: Vec::new(),
        coefficient_values: Vec::new(),
        column_families: Vec::new(),
        trend_changepoints: trend_set,
        seasonality_changepoints: seasonality_cps,
        volatility: None,
    };

    // Assemble and fit.
    let features = model.assemble(series.timestamps(), None, None)?;
    let target = series.values();
    let fit_rows = crate::featurize::fit_rows(&features, target);
    if fit_rows.is_empty() {
        return Err(Error::Data(
            "no usable rows after excluding missing targets and lag warm-up".into(),
        ));
    }
    let x = features.to_matrix(&fit_rows);
    let y = DVector::from_iterator(fit_rows.len(), fit_rows.iter().map(|&r| target[r]));

    let p = features.n_cols();
    let beta = match model.spec.algorithm {
        Algorithm::Ols => fit_penalized(
            &x,
            &y,
            &PenaltySpec {
                l1_weight: 0.0,
                l2_weight: 0.0,
                per_column_l1_weights: None,
                penalty_mask: vec![Penalty::Unpenalized; p],
            },
        )?,
        Algorithm::Ridge => {
            let mask: Vec<Penalty> = features
                .columns()
                .iter()
                .map(|c| {
                    if c.family == Family::Intercept {
                        Penalty::Unpenalized
                    } else {
                        Penalty::L2
                    }
                })
                .collect();
            fit_penalized(
                &x,
                &y,
                &PenaltySpec {
                    l1_weight: 0.0,
                    l2_weight: model.spec.algorithm_params.lambda2,
                    per_column_l1_weights: None,
                    penalty_mask: mask,
                },
            )?
        }
        Algorithm::Lasso => {
            let mask: Vec<Penalty> = features
                .columns()
                .iter()
                .map(|c| {
                    if c.family == Family::Intercept {
                        Penalty::Unpenalized
                    } else {
                        Penalty::L1
                    }
                })
                .collect();
            // lambda1 is user-facing in the (1/(2n)) convention.
            fit_penalized(
                &x,
                &y,
                &PenaltySpec {
                    l1_weight: 2.0 * fit_rows.len() as f64 * model.spec.algorithm_params.lambda1,
                    l2_weight: 0.0,
                    per_column_l1_weights: None,
                    penalty_mask: mask,
                },
            )?
        }
        Algorithm::Quantile(tau) => fit_quantile(&x, &y, tau)?,
    };

    model.coefficient_names = features.columns().iter().map(|c| c.name.clone()).collect();
    model.coefficient_values = beta.iter().copied().collect();
    model.column_families = features.columns().iter().map(|c| c.family).collect();
    Ok(model)
}

impl FittedModel {
    fn period_seconds(&self) -> i64 {
        self.frequency.period_seconds()
    }

    pub fn train_timestamps(&self) -> Vec<NaiveDateTime> {
        let period = chrono::Duration::seconds(self.period_seconds());
        (0..self.n_train as i64)
            .map(|i| self.train_start + period * i as i32)
            .collect()
    }

    fn train_end(&self) -> NaiveDateTime {
        self.train_start
            + chrono::Duration::seconds((self.n_train as i64 - 1) * self.period_seconds())
    }

    /// Global index of a timestamp on the training grid; errors when the
    /// timestamp is off-grid or before the training start.
    fn global_index(&self, ts: NaiveDateTime) -> Result<usize> {
        let delta = (ts - self.train_start).num_seconds();
        if delta < 0 {
            return Err(Error::Config(format!(
                "timestamp {ts} precedes the training span"
            )));
        }
        let period = self.period_seconds();
        if delta % period != 0 {
            return Err(Error::Config(format!(
                "timestamp {ts} does not lie on the {period}s training grid"
            )));
        }
        Ok((delta / period) as usize)
    }

    /// Builds the design matrix at the given timestamps. `future_regressors`
    /// supplies current-value regressor columns for rows past the training
    /// span (aligned with the suffix of `timestamps` that lies there).
    fn assemble(
        &self,
        timestamps: &[NaiveDateTime],
        future_regressors: Option<&RegressorTable>,
        access_log: Option<&LagAccessLog>,
    ) -> Result<FeatureMatrix> {
        let spec = &self.spec;
        let rows = time_features_at(timestamps, self.origin);
        let indices: Vec<usize> = timestamps
            .iter()
            .map(|&ts| self.global_index(ts))
            .collect::<Result<_>>()?;
        let n = timestamps.len();

        let mut fm = FeatureMatrix::new();
        fm.push(Column::new("intercept", Family::Intercept, vec![1.0; n]))?;

        if let GrowthChoice::Fixed {
            exponent,
            changepoints,
        } = &spec.growth
        {
            let ct: Vec<f64> = rows.iter().map(|r| r.ct).collect();
            let cps: Vec<(String, f64)> = changepoints
                .iter()
                .map(|&cp| (format_timestamp(cp), years_since(self.origin, cp)))
                .collect();
            fm.extend(growth_terms(&ct, *exponent, &cps)?)?;
        }

        for seas in &spec.seasonality {
            let phase: Vec<f64> = rows.iter().map(|r| seas.phase_feature.extract(r)).collect();
            let base = fourier_terms(&phase, seas)?;
            let mut truncated: Vec<Column> = Vec::new();
            for scp in &self.seasonality_changepoints {
                if scp.component == seas.phase_feature.name() {
                    let mask: Vec<f64> = timestamps
                        .iter()
                        .map(|&t| if t > scp.instant { 1.0 } else { 0.0 })
                        .collect();
                    for col in &base {
                        truncated.push(Column::new(
                            format!("{}:cp:{}", col.name, format_timestamp(scp.instant)),
                            Family::Seasonality,
                            col.values.iter().zip(&mask).map(|(v, m)| v * m).collect(),
                        ));
                    }
                }
            }
            fm.extend(base)?;
            fm.extend(truncated)?;
        }

        if let Some(events) = &spec.events {
            let windows = label_events(
                timestamps,
                &events.occurrences,
                events.expand_before_seconds,
                events.expand_after_seconds,
            )?;
            for basis in &events.bases {
                fm.extend(event_basis(timestamps, &windows, basis)?)?;
            }
        }

        // Regressor and lag columns are computed first so interactions can
        // reference them, but are appended after the interaction block to
        // keep the family order.
        let mut staged: Vec<Column> = Vec::new();
        for name in &spec.regressors {
            let mut vals = Vec::with_capacity(n);
            for (r, &idx) in indices.iter().enumerate() {
                if idx < self.n_train {
                    let col = self.regressor_history.get(name).ok_or_else(|| {
                        Error::Data(format!("regressor '{name}' missing from history"))
                    })?;
                    vals.push(col[idx]);
                } else {
                    let future = future_regressors.ok_or_else(|| {
                        Error::Data(format!("future values required for regressor '{name}'"))
                    })?;
                    let col = future.get(name).ok_or_else(|| {
                        Error::Data(format!("future values missing for regressor '{name}'"))
                    })?;
                    // Future tables align with the suffix of the timestamps
                    // that lies past the training span.
                    let future_pos = r + col.len() - n;
                    vals.push(col[future_pos]);
                }
            }
            staged.push(Column::new(format!("reg:{name}"), Family::Regressor, vals));
        }
        let mut staged_lags: Vec<Column> = Vec::new();
        if let Some(lags) = &spec.lags {
            staged_lags.extend(crate::featurize::lag_terms_at(
                &self.train_values,
                &indices,
                lags,
                "y",
                access_log,
            )?);
        }
        for lr in &spec.lagged_regressors {
            let hist = self.regressor_history.get(&lr.name).ok_or_else(|| {
                Error::Data(format!("lagged regressor '{}' missing from history", lr.name))
            })?;
            staged_lags.extend(crate::featurize::lag_terms_at(
                hist,
                &indices,
                &lr.lags,
                &lr.name,
                access_log,
            )?);
        }

        // Interactions match against everything assembled so far.
        let mut interactions: Vec<Column> = Vec::new();
        {
            let pool: Vec<&Column> = fm
                .columns()
                .iter()
                .chain(staged.iter())
                .chain(staged_lags.iter())
                .collect();
            let drop_first = !spec.algorithm.is_regularized();
            for inter in &spec.interactions {
                let lefts: Vec<&Column> = pool
                    .iter()
                    .copied()
                    .filter(|c| glob_match(&inter.left, &c.name))
                    .collect();
                if lefts.is_empty() {
                    return Err(Error::Config(format!(
                        "interaction pattern '{}' matched no columns",
                        inter.left
                    )));
                }
                if let Some(cat) = inter.right.strip_prefix("cat:") {
                    let (cat_values, levels): (Vec<i64>, Vec<i64>) = match cat {
                        "dow" => (
                            rows.iter().map(|r| r.dow as i64).collect(),
                            (0..7).collect(),
                        ),
                        "month" => (
                            timestamps.iter().map(|t| t.month() as i64).collect(),
                            (1..=12).collect(),
                        ),
                        "is_weekend" => (
                            rows.iter()
                                .map(|r| i64::from(r.dow == 0 || r.dow == 6))
                                .collect(),
                            vec![0, 1],
                        ),
                        other => {
                            return Err(Error::Config(format!(
                                "unknown categorical '{other}' (expected dow, month or \
                                 is_weekend)"
                            )))
                        }
                    };
                    for left in &lefts {
                        for col in
                            interaction_categorical(left, cat, &cat_values, &levels, drop_first)?
                        {
                            if !interactions.iter().any(|c| c.name == col.name) {
                                interactions.push(col);
                            }
                        }
                    }
                } else {
                    let rights: Vec<&Column> = pool
                        .iter()
                        .copied()
                        .filter(|c| glob_match(&inter.right, &c.name))
                        .collect();
                    if rights.is_empty() {
                        return Err(Error::Config(format!(
                            "interaction pattern '{}' matched no columns",
                            inter.right
                        )));
                    }
                    for left in &lefts {
                        for right in &rights {
                            let col = interaction(left, right)?;
                            if !interactions.iter().any(|c| c.name == col.name) {
                                interactions.push(col);
                            }
                        }
                    }
                }
            }
        }
        fm.extend(interactions)?;
        fm.extend(staged)?;
        fm.extend(staged_lags)?;
        Ok(fm)
    }

    /// Component contributions per family for a prebuilt feature matrix.
    fn components_for(&self, features: &FeatureMatrix) -> Result<ComponentTable> {
        if features.n_cols() != self.coefficient_values.len() {
            return Err(Error::Numeric(
                "feature matrix no longer matches the fitted coefficients".into(),
            ));
        }
        for (col, name) in features.columns().iter().zip(&self.coefficient_names) {
            if &col.name != name {
                return Err(Error::Numeric(format!(
                    "column order drifted: expected '{name}', built '{}'",
                    col.name
                )));
            }
        }
        let n = features.n_rows();
        // Family grouping: growth joins its changepoint hinges; each
        // seasonality component is its own family.
        let key_of = |col: &Column| -> String {
            match col.family {
                Family::Intercept => "intercept".to_string(),
                Family::Growth | Family::Changepoint => "growth".to_string(),
                Family::Seasonality => {
                    let mut parts = col.name.split(':');
                    parts.next();
                    format!("seas:{}", parts.next().unwrap_or("unknown"))
                }
                Family::Event => "events".to_string(),
                Family::Interaction => "interactions".to_string(),
                Family::Regressor => "regressors".to_string(),
                Family::Lag => "lags".to_string(),
            }
        };
        let mut headers: Vec<String> = Vec::new();
        for col in features.columns() {
            let key = key_of(col);
            if !headers.contains(&key) {
                headers.push(key);
            }
        }
        let mut rows = vec![vec![0.0; headers.len() + 1]; n];
        for (j, col) in features.columns().iter().enumerate() {
            let key = key_of(col);
            let h = headers.iter().position(|k| *k == key).unwrap();
            let coef = self.coefficient_values[j];
            for (r, row) in rows.iter_mut().enumerate() {
                row[h] += coef * col.values[r];
            }
        }
        let total_idx = headers.len();
        for row in &mut rows {
            row[total_idx] = row[..total_idx].iter().sum();
        }
        headers.push("total".to_string());
        Ok(ComponentTable { headers, rows })
    }

    /// Simulation-free prediction `horizon` periods past the training span.
    pub fn predict(
        &self,
        horizon: usize,
        future_regressors: &RegressorTable,
    ) -> Result<ForecastResult> {
        self.predict_with_log(horizon, future_regressors, None)
    }

    /// Prediction with an access log recording the highest training-history
    /// index any lag feature read.
    pub fn predict_probed(
        &self,
        horizon: usize,
        future_regressors: &RegressorTable,
    ) -> Result<(ForecastResult, LagAccessLog)> {
        let log = LagAccessLog::new();
        let result = self.predict_with_log(horizon, future_regressors, Some(&log))?;
        Ok((result, log))
    }

    fn predict_with_log(
        &self,
        horizon: usize,
        future_regressors: &RegressorTable,
        access_log: Option<&LagAccessLog>,
    ) -> Result<ForecastResult> {
        if horizon == 0 {
            return Err(Error::Config("forecast horizon must be >= 1".into()));
        }
        if self.spec.uses_lags() {
            let min_lag = self.spec.min_lag().unwrap_or(usize::MAX);
            if min_lag < horizon {
                return Err(Error::Config(format!(
                    "horizon {horizon} exceeds the minimum lag {min_lag}: lag values past \
                     the forecast start would have to be simulated, which this model \
                     refuses (simulation-free prediction contract)"
                )));
            }
        }
        let missing: Vec<&String> = self
            .spec
            .regressors
            .iter()
            .filter(|n| future_regressors.get(n).is_none())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Data(format!(
                "future values missing for regressors: {missing:?}"
            )));
        }
        for name in &self.spec.regressors {
            let col = future_regressors.get(name).unwrap();
            if col.len() < horizon {
                return Err(Error::Data(format!(
                    "future regressor '{name}' has {} rows, horizon needs {horizon}",
                    col.len()
                )));
            }
        }

        let period = chrono::Duration::seconds(self.period_seconds());
        let mut timestamps = Vec::with_capacity(horizon);
        let mut t = self.train_end();
        for _ in 0..horizon {
            t += period;
            timestamps.push(t);
        }

        let features = self.assemble(&timestamps, Some(future_regressors), access_log)?;
        let components = self.components_for(&features)?;
        let total_idx = components.headers.len() - 1;
        let point_raw: Vec<f64> = components.rows.iter().map(|r| r[total_idx]).collect();

        let (lower, upper, coverage) = if let Some(vol) = &self.volatility {
            let rows = time_features_at(&timestamps, self.origin);
            let windows = match &self.spec.events {
                Some(events) => label_events(
                    &timestamps,
                    &events.occurrences,
                    events.expand_before_seconds,
                    events.expand_after_seconds,
                )?,
                None => vec![Vec::new(); timestamps.len()],
            };
            let tuples: Vec<Vec<i64>> = timestamps
                .iter()
                .enumerate()
                .map(|(i, &ts)| feature_tuple(&vol.config.features, &rows[i], &windows[i], ts))
                .collect();
            let (lo, hi) = interval(&vol.table, &point_raw, &tuples, vol.config.coverage)?;
            (Some(lo), Some(hi), Some(vol.config.coverage))
        } else {
            (None, None, None)
        };

        let clip = |v: f64| if self.spec.clip_at_zero { v.max(0.0) } else { v };
        let point: Vec<f64> = point_raw.iter().map(|&v| clip(v)).collect();
        let lower = lower.map(|v| v.into_iter().map(clip).collect());
        let upper = upper.map(|v| v.into_iter().map(clip).collect());

        Ok(ForecastResult {
            timestamps,
            point,
            point_raw,
            lower,
            upper,
            coverage,
            components,
        })
    }

    /// Additive decomposition at the given timestamps (on the training grid
    /// or later). Row sums equal the unclipped point forecast.
    pub fn decompose(&self, timestamps: &[NaiveDateTime]) -> Result<ComponentTable> {
        if !self.spec.regressors.is_empty() {
            for &ts in timestamps {
                if self.global_index(ts)? >= self.n_train {
                    return Err(Error::Data(format!(
                        "decomposition at {ts} needs future values for regressors \
                         {:?}; use predict instead",
                        self.spec.regressors
                    )));
                }
            }
        }
        let features = self.assemble(timestamps, None, None)?;
        self.components_for(&features)
    }

    /// In-sample fitted values over the rows used for fitting.
    pub fn fitted_values(&self) -> Result<(Vec<usize>, Vec<f64>)> {
        let timestamps = self.train_timestamps();
        let features = self.assemble(&timestamps, None, None)?;
        let rows = crate::featurize::fit_rows(&features, &self.train_values);
        let components = self.components_for(&features)?;
        let total_idx = components.headers.len() - 1;
        let fitted = rows
            .iter()
            .map(|&r| components.rows[r][total_idx])
            .collect();
        Ok((rows, fitted))
    }

    /// Phase 2: fits the residual volatility table on the training rows and
    /// attaches it. The point forecast is unaffected.
    pub fn fit_volatility(&mut self, config: &VolatilityConfig) -> Result<()> {
        config.validate()?;
        let (rows, fitted) = self.fitted_values()?;
        let residuals: Vec<f64> = rows
            .iter()
            .zip(&fitted)
            .map(|(&r, &f)| self.train_values[r] - f)
            .collect();
        let timestamps = self.train_timestamps();
        let raw = time_features_at(&timestamps, self.origin);
        let windows = match &self.spec.events {
            Some(events) => label_events(
                &timestamps,
                &events.occurrences,
                events.expand_before_seconds,
                events.expand_after_seconds,
            )?,
            None => vec![Vec::new(); timestamps.len()],
        };
        let tuples: Vec<Vec<i64>> = rows
            .iter()
            .map(|&r| feature_tuple(&config.features, &raw[r], &windows[r], timestamps[r]))
            .collect();
        let table = fit_volatility(&residuals, &tuples, config)?;
        self.volatility = Some(VolatilityModel {
            table,
            config: config.clone(),
        });
        Ok(())
    }

    /// Serializes the model as a self-describing JSON document; reloading
    /// reproduces predictions bit for bit.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("model serialization failed: {e}")))
    }

    pub fn from_json(doc: &str) -> Result<FittedModel> {
        let model: FittedModel = serde_json::from_str(doc)
            .map_err(|e| Error::Data(format!("model document parse failure: {e}")))?;
        if model.coefficient_names.len() != model.coefficient_values.len()
            || model.coefficient_names.len() != model.column_families.len()
        {
            return Err(Error::Data(
                "model document has misaligned coefficient tables".into(),
            ));
        }
        Ok(model)
    }
}
