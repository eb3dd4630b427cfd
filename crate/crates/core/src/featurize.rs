//! Basis-function columns and design-matrix assembly.
//!
//! Raw time features become Fourier seasonality terms, growth and hinge
//! terms, event bases, lag/aggregated-lag columns and interactions; the
//! assembler produces a named, provenance-tagged design matrix with a
//! deterministic column order.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::timebase::{EventWindow, RawFeatureRow};

/// Which raw feature supplies a Fourier phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseFeature {
    Tod,
    Tow,
    Toy,
    Tom,
    Toq,
}

impl PhaseFeature {
    pub fn name(&self) -> &'static str {
        match self {
            PhaseFeature::Tod => "tod",
            PhaseFeature::Tow => "tow",
            PhaseFeature::Toy => "toy",
            PhaseFeature::Tom => "tom",
            PhaseFeature::Toq => "toq",
        }
    }

    pub fn extract(&self, row: &RawFeatureRow) -> f64 {
        match self {
            PhaseFeature::Tod => row.tod,
            PhaseFeature::Tow => row.tow,
            PhaseFeature::Toy => row.toy,
            PhaseFeature::Tom => row.tom,
            PhaseFeature::Toq => row.toq,
        }
    }

    /// Natural period of the raw feature (24 hours, 7 days, 1 cycle).
    pub fn natural_period(&self) -> f64 {
        match self {
            PhaseFeature::Tod => 24.0,
            PhaseFeature::Tow => 7.0,
            PhaseFeature::Toy | PhaseFeature::Tom | PhaseFeature::Toq => 1.0,
        }
    }
}

/// Fourier seasonality block: sin/cos of k * (2 pi / period) * phase for
/// k = 1..=order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierSpec {
    pub phase_feature: PhaseFeature,
    pub period: f64,
    pub order: usize,
}

impl FourierSpec {
    pub fn new(phase_feature: PhaseFeature, order: usize) -> Self {
        Self {
            phase_feature,
            period: phase_feature.natural_period(),
            order,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0) {
            return Err(Error::Config(format!(
                "fourier period must be > 0, got {}",
                self.period
            )));
        }
        if self.order < 1 {
            return Err(Error::Config("fourier order must be >= 1".into()));
        }
        Ok(())
    }
}

/// Growth basis f(t) = t^p with optional slope changepoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthSpec {
    /// One of 1/3, 1/2, 1, 2, 3.
    pub exponent: f64,
    /// Instants where the growth derivative may change; strictly increasing.
    #[serde(default)]
    pub changepoints: Vec<NaiveDateTime>,
}

const GROWTH_EXPONENTS: [f64; 5] = [1.0 / 3.0, 0.5, 1.0, 2.0, 3.0];

impl GrowthSpec {
    pub fn validate(&self) -> Result<()> {
        if !GROWTH_EXPONENTS.iter().any(|p| (p - self.exponent).abs() < 1e-9) {
            return Err(Error::Config(format!(
                "growth exponent must be one of 1/3, 1/2, 1, 2, 3; got {}",
                self.exponent
            )));
        }
        for w in self.changepoints.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config(
                    "growth changepoints must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Event basis block: sin/cos of k * 2 pi * (t - t_i) / l inside the event
/// time coverage, zero outside; optionally a plain 0/1 indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventBasisSpec {
    pub label: String,
    pub order: usize,
    #[serde(default)]
    pub include_indicator: bool,
}

impl EventBasisSpec {
    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::Config(format!(
                "event basis order for '{}' must be >= 1",
                self.label
            )));
        }
        Ok(())
    }
}

/// Autoregressive lag structure: plain lags plus aggregated lag groups,
/// each group contributing one averaged column.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LagSpec {
    #[serde(default)]
    pub plain_lags: Vec<usize>,
    #[serde(default)]
    pub agg_groups: Vec<Vec<usize>>,
}

impl LagSpec {
    pub fn validate(&self) -> Result<()> {
        for &l in &self.plain_lags {
            if l < 1 {
                return Err(Error::Config("lags must be >= 1".into()));
            }
        }
        for g in &self.agg_groups {
            if g.is_empty() {
                return Err(Error::Config("aggregated lag groups must be non-empty".into()));
            }
            if g.iter().any(|&l| l < 1) {
                return Err(Error::Config("lags must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.plain_lags.is_empty() && self.agg_groups.is_empty()
    }

    pub fn max_lag(&self) -> usize {
        let plain = self.plain_lags.iter().copied().max().unwrap_or(0);
        let agg = self
            .agg_groups
            .iter()
            .flat_map(|g| g.iter().copied())
            .max()
            .unwrap_or(0);
        plain.max(agg)
    }

    pub fn min_lag(&self) -> Option<usize> {
        self.plain_lags
            .iter()
            .copied()
            .chain(self.agg_groups.iter().flat_map(|g| g.iter().copied()))
            .min()
    }

    /// Default autoregressive structure for hourly data with a 24-period
    /// horizon: lags 24, 25, 26 plus same-hour-of-week, last-week and
    /// week-before-last averages.
    pub fn default_hourly_24() -> Self {
        LagSpec {
            plain_lags: vec![24, 25, 26],
            agg_groups: vec![
                vec![7 * 24, 14 * 24, 21 * 24],
                (24..192).collect(),
                (192..360).collect(),
            ],
        }
    }
}

/// Where a design-matrix column came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Intercept,
    Growth,
    Changepoint,
    Seasonality,
    Event,
    Interaction,
    Regressor,
    Lag,
}

/// A named feature column with provenance.
#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub family: Family,
    pub values: Vec<f64>,
}

impl Column {
    pub fn new(name: impl Into<String>, family: Family, values: Vec<f64>) -> Self {
        Column {
            name: name.into(),
            family,
            values,
        }
    }
}

/// Named design matrix; all columns equal length, names unique.
#[derive(Debug, Clone, Default)]
pub struct FeatureMatrix {
    columns: Vec<Column>,
}

impl FeatureMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, col: Column) -> Result<()> {
        if self.columns.iter().any(|c| c.name == col.name) {
            return Err(Error::Config(format!(
                "duplicate design-matrix column '{}'",
                col.name
            )));
        }
        if let Some(first) = self.columns.first() {
            if first.values.len() != col.values.len() {
                return Err(Error::Data(format!(
                    "column '{}' has {} rows, expected {}",
                    col.name,
                    col.values.len(),
                    first.values.len()
                )));
            }
        }
        self.columns.push(col);
        Ok(())
    }

    pub fn extend(&mut self, cols: Vec<Column>) -> Result<()> {
        for c in cols {
            self.push(c)?;
        }
        Ok(())
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.values.len())
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Dense matrix over the given row subset, column order preserved.
    pub fn to_matrix(&self, rows: &[usize]) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(rows.len(), self.columns.len());
        for (j, col) in self.columns.iter().enumerate() {
            for (i, &r) in rows.iter().enumerate() {
                m[(i, j)] = col.values[r];
            }
        }
        m
    }

    /// Row indices where every column is finite.
    pub fn finite_rows(&self) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&r| self.columns.iter().all(|c| c.values[r].is_finite()))
            .collect()
    }
}

/// 2K sin/cos columns for a Fourier block. Phase values are expected in
/// [0, period).
pub fn fourier_terms(phase: &[f64], spec: &FourierSpec) -> Result<Vec<Column>> {
    spec.validate()?;
    let omega = 2.0 * PI / spec.period;
    let mut out = Vec::with_capacity(2 * spec.order);
    for k in 1..=spec.order {
        let kw = k as f64 * omega;
        let sin: Vec<f64> = phase.iter().map(|&p| (kw * p).sin()).collect();
        let cos: Vec<f64> = phase.iter().map(|&p| (kw * p).cos()).collect();
        let feat = spec.phase_feature.name();
        out.push(Column::new(
            format!("seas:{feat}:sin{k}"),
            Family::Seasonality,
            sin,
        ));
        out.push(Column::new(
            format!("seas:{feat}:cos{k}"),
            Family::Seasonality,
            cos,
        ));
    }
    Ok(out)
}

fn growth_f(ct: f64, p: f64) -> f64 {
    ct.powf(p)
}

/// Base growth column f(ct) plus one hinge column per changepoint:
/// 1_{ct > c} (f(ct) - f(c)). Hinge columns are 0 at and before their
/// changepoint and continuous across it. `changepoints` are (name, ct) pairs.
pub fn growth_terms(ct: &[f64], exponent: f64, changepoints: &[(String, f64)]) -> Result<Vec<Column>> {
    if exponent < 1.0 && ct.iter().any(|&c| c < 0.0) {
        return Err(Error::Numeric(format!(
            "growth exponent {exponent} requires non-negative continuous time"
        )));
    }
    let mut out = Vec::with_capacity(1 + changepoints.len());
    let base: Vec<f64> = ct.iter().map(|&c| growth_f(c, exponent)).collect();
    out.push(Column::new("growth:base", Family::Growth, base));
    for (name, cp_ct) in changepoints {
        let f_cp = growth_f(*cp_ct, exponent);
        let vals: Vec<f64> = ct
            .iter()
            .map(|&c| {
                if c > *cp_ct {
                    growth_f(c, exponent) - f_cp
                } else {
                    0.0
                }
            })
            .collect();
        out.push(Column::new(
            format!("growth:cp:{name}"),
            Family::Changepoint,
            vals,
        ));
    }
    Ok(out)
}

/// Event basis columns for one label: zero outside the event time coverage,
/// sin/cos of k * 2 pi * (t - t_i) / l inside, plus an optional indicator.
pub fn event_basis(
    timestamps: &[NaiveDateTime],
    windows: &[Vec<EventWindow>],
    spec: &EventBasisSpec,
) -> Result<Vec<Column>> {
    spec.validate()?;
    if timestamps.len() != windows.len() {
        return Err(Error::Data(
            "event windows not aligned with timestamps".into(),
        ));
    }
    // Phase within the covering window of this label, or None outside.
    let phases: Vec<Option<f64>> = timestamps
        .iter()
        .zip(windows)
        .map(|(&t, ws)| {
            ws.iter().find(|w| w.label == spec.label).map(|w| {
                (t - w.start).num_seconds() as f64 / w.length_seconds as f64
            })
        })
        .collect();

    let mut out = Vec::new();
    for k in 1..=spec.order {
        let kw = 2.0 * PI * k as f64;
        let sin: Vec<f64> = phases
            .iter()
            .map(|p| p.map_or(0.0, |p| (kw * p).sin()))
            .collect();
        let cos: Vec<f64> = phases
            .iter()
            .map(|p| p.map_or(0.0, |p| (kw * p).cos()))
            .collect();
        out.push(Column::new(
            format!("event:{}:sin{k}", spec.label),
            Family::Event,
            sin,
        ));
        out.push(Column::new(
            format!("event:{}:cos{k}", spec.label),
            Family::Event,
            cos,
        ));
    }
    if spec.include_indicator {
        let ind: Vec<f64> = phases
            .iter()
            .map(|p| if p.is_some() { 1.0 } else { 0.0 })
            .collect();
        out.push(Column::new(
            format!("event:{}:ind", spec.label),
            Family::Event,
            ind,
        ));
    }
    Ok(out)
}

/// Records the highest history index a lag feature actually read; used to
/// assert the simulation-free contract (no reads at or past the forecast
/// start).
#[derive(Debug, Default)]
pub struct LagAccessLog {
    max_index: std::cell::Cell<Option<usize>>,
}

impl LagAccessLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, idx: usize) {
        let cur = self.max_index.get();
        if cur.map_or(true, |c| idx > c) {
            self.max_index.set(Some(idx));
        }
    }

    pub fn max_index_read(&self) -> Option<usize> {
        self.max_index.get()
    }
}

/// Lag columns evaluated at arbitrary positions on the timeline: row r sits
/// at `indices[r]` periods after the start of `history`, and lag j reads
/// `history[indices[r] - j]`. Positions before the history start are NaN;
/// reads at or past `history.len()` are refused (those values are in the
/// forecast region and would have to be simulated).
pub fn lag_terms_at(
    history: &[f64],
    indices: &[usize],
    spec: &LagSpec,
    series_name: &str,
    access_log: Option<&LagAccessLog>,
) -> Result<Vec<Column>> {
    spec.validate()?;
    let n = history.len();
    let read = |idx: usize, lag: usize| -> Result<f64> {
        if lag > idx {
            return Ok(f64::NAN);
        }
        let src = idx - lag;
        if src >= n {
            return Err(Error::Config(format!(
                "lag {lag} at position {idx} reads index {src}, inside the forecast \
                 region (history ends at {n}); simulation-free prediction requires \
                 the minimum lag to be at least the horizon"
            )));
        }
        if let Some(log) = access_log {
            log.record(src);
        }
        Ok(history[src])
    };
    let mut out = Vec::new();
    for &lag in &spec.plain_lags {
        let mut vals = Vec::with_capacity(indices.len());
        for &idx in indices {
            vals.push(read(idx, lag)?);
        }
        out.push(Column::new(
            format!("lag:{series_name}:{lag}"),
            Family::Lag,
            vals,
        ));
    }
    for group in &spec.agg_groups {
        let label = agg_group_label(group);
        let mut vals = Vec::with_capacity(indices.len());
        for &idx in indices {
            let mut sum = 0.0;
            let mut missing = false;
            for &lag in group {
                let v = read(idx, lag)?;
                if v.is_nan() && lag > idx {
                    missing = true;
                } else {
                    sum += v;
                }
            }
            vals.push(if missing {
                f64::NAN
            } else {
                sum / group.len() as f64
            });
        }
        out.push(Column::new(
            format!("lag:{series_name}:avg({label})"),
            Family::Lag,
            vals,
        ));
    }
    Ok(out)
}

/// Lag columns over `y` for the given series name. Positions whose lags
/// precede the start of `y` are NaN; NaN source values propagate.
pub fn lag_terms(y: &[f64], spec: &LagSpec, series_name: &str) -> Result<Vec<Column>> {
    let n = y.len();
    if spec.max_lag() >= n {
        return Err(Error::Data(format!(
            "maximum lag {} is not below the series length {n}",
            spec.max_lag()
        )));
    }
    let indices: Vec<usize> = (0..n).collect();
    lag_terms_at(y, &indices, spec, series_name, None)
}

/// Compact label for an aggregated lag group; contiguous runs collapse to
/// `a..b`.
fn agg_group_label(group: &[usize]) -> String {
    let contiguous = group.windows(2).all(|w| w[1] == w[0] + 1);
    if contiguous && group.len() > 2 {
        format!("{}..{}", group[0], group[group.len() - 1])
    } else {
        group
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Elementwise product of two numeric columns.
pub fn interaction(a: &Column, b: &Column) -> Result<Column> {
    if a.values.len() != b.values.len() {
        return Err(Error::Data(format!(
            "interaction length mismatch: '{}' has {} rows, '{}' has {}",
            a.name,
            a.values.len(),
            b.name,
            b.values.len()
        )));
    }
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| x * y)
        .collect();
    Ok(Column::new(
        format!("inter:{}*{}", a.name, b.name),
        Family::Interaction,
        values,
    ))
}

/// Product of a numeric column with the one-hot encoding of a categorical:
/// one column per level, equal to the numeric value where the category
/// matches and 0 elsewhere. `drop_first` removes the first level (for
/// unregularized fitters).
pub fn interaction_categorical(
    a: &Column,
    cat_name: &str,
    cat_values: &[i64],
    levels: &[i64],
    drop_first: bool,
) -> Result<Vec<Column>> {
    if a.values.len() != cat_values.len() {
        return Err(Error::Data(format!(
            "interaction length mismatch: '{}' has {} rows, '{}' has {}",
            a.name,
            a.values.len(),
            cat_name,
            cat_values.len()
        )));
    }
    let start = usize::from(drop_first);
    let mut out = Vec::new();
    for &level in levels.iter().skip(start) {
        let values: Vec<f64> = a
            .values
            .iter()
            .zip(cat_values)
            .map(|(&x, &c)| if c == level { x } else { 0.0 })
            .collect();
        out.push(Column::new(
            format!("inter:{}*{cat_name}={level}", a.name),
            Family::Interaction,
            values,
        ));
    }
    Ok(out)
}

/// Glob-style match supporting `*` wildcards, used by interaction selectors.
pub fn glob_match(pattern: &str, name: &str) -> bool {
    fn rec(p: &[u8], n: &[u8]) -> bool {
        match (p.first(), n.first()) {
            (None, None) => true,
            (Some(b'*'), _) => {
                rec(&p[1..], n) || (!n.is_empty() && rec(p, &n[1..]))
            }
            (Some(&pc), Some(&nc)) if pc == nc => rec(&p[1..], &n[1..]),
            _ => false,
        }
    }
    rec(pattern.as_bytes(), name.as_bytes())
}

/// Computes the usable fit rows for a matrix/target pair: the target must
/// be finite and every feature value in the row finite. Excluded rows keep
/// their feature values, so the index mapping back into the full range is
/// just the returned indices.
pub fn fit_rows(features: &FeatureMatrix, target: &[f64]) -> Vec<usize> {
    (0..features.n_rows())
        .filter(|&r| {
            target[r].is_finite() && features.columns().iter().all(|c| c.values[r].is_finite())
        })
        .collect()
}
