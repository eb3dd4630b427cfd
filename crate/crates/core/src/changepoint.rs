//! Automatic trend and seasonality changepoint detection.
//!
//! Trend detection regresses the (optionally aggregated) series on a linear
//! term, yearly Fourier terms and one hinge term per candidate instant,
//! penalizing only the hinge coefficients with adaptively weighted L1.
//! Surviving hinges are filtered by a minimum-distance rule. Seasonality
//! changes are detected the same way with truncated Fourier terms.

use chrono::{Duration, NaiveDateTime};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{fourier_terms, FourierSpec, PhaseFeature};
use crate::solvers::{
    adaptive_weights, fit_mixed_two_step, lambda_max, MixedProblem, MixedProjection,
    ADAPTIVE_EPSILON, ADAPTIVE_GAMMA,
};
use crate::timebase::{time_features_at, years_since, Frequency, TimeSeries};

const SECONDS_PER_DAY: i64 = 86_400;

/// Configuration for trend changepoint detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCpConfig {
    /// Base periods per aggregate; `None` or 1 disables aggregation.
    #[serde(default)]
    pub aggregation_window: Option<usize>,
    /// Base periods between potential changepoints.
    pub candidate_spacing: usize,
    /// No candidates within this many seconds of the series end.
    pub forbidden_tail_seconds: i64,
    /// No candidates within this many seconds of the series start.
    pub forbidden_head_seconds: i64,
    /// Yearly Fourier order K1 in the detection regression.
    pub yearly_order: usize,
    /// Adds truncated yearly terms at every multiple of this duration, so
    /// yearly seasonality may refit over long histories. `None` disables.
    #[serde(default)]
    pub seasonality_refit_every_seconds: Option<i64>,
    /// Multiplier on lambda_max; 1 selects nothing.
    pub lambda_fraction: f64,
    /// Hinges surviving the L1 step are refit by OLS and eliminated
    /// backwards until every |t| statistic clears this threshold, so noise
    /// fits with tiny-but-nonzero lasso coefficients do not surface as
    /// changepoints. `None` picks the Bonferroni threshold for the number
    /// of candidates scanned; 0 disables the filter.
    #[serde(default)]
    pub significance_t_threshold: Option<f64>,
    /// Minimum distance between detected changepoints, in seconds.
    pub min_distance_seconds: i64,
    #[serde(default)]
    pub custom_changepoints: Vec<NaiveDateTime>,
    /// Detected points closer than this to a custom point are dropped.
    pub min_distance_to_custom_seconds: i64,
}

impl TrendCpConfig {
    /// Defaults for a given frequency: candidates every 15 days skipping the
    /// last 30 days, yearly order 15, lambda 1e-3 of lambda_max, 3-day
    /// aggregation, yearly-seasonality refit every 2 years. The head window
    /// spans one candidate spacing to avoid a pseudo-changepoint at the
    /// series start.
    pub fn defaults_for(frequency: Frequency) -> Self {
        let period = frequency.period_seconds();
        let spacing = ((15 * SECONDS_PER_DAY) / period).max(1) as usize;
        let agg = ((3 * SECONDS_PER_DAY) / period).max(1) as usize;
        TrendCpConfig {
            aggregation_window: if agg > 1 { Some(agg) } else { None },
            candidate_spacing: spacing,
            forbidden_tail_seconds: 30 * SECONDS_PER_DAY,
            forbidden_head_seconds: spacing as i64 * period,
            yearly_order: 15,
            seasonality_refit_every_seconds: Some(2 * 365 * SECONDS_PER_DAY),
            lambda_fraction: 1e-3,
            significance_t_threshold: None,
            min_distance_seconds: 15 * SECONDS_PER_DAY,
            custom_changepoints: Vec::new(),
            min_distance_to_custom_seconds: 15 * SECONDS_PER_DAY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidate_spacing == 0 {
            return Err(Error::Config("candidate spacing must be > 0".into()));
        }
        if !(self.lambda_fraction > 0.0 && self.lambda_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "lambda fraction must be in (0, 1], got {}",
                self.lambda_fraction
            )));
        }
        if self.min_distance_seconds < 0 || self.min_distance_to_custom_seconds < 0 {
            return Err(Error::Config("minimum distances must be >= 0".into()));
        }
        if self.yearly_order == 0 {
            return Err(Error::Config("yearly order must be >= 1".into()));
        }
        if let Some(t) = self.significance_t_threshold {
            if !(t >= 0.0) {
                return Err(Error::Config("significance threshold must be >= 0".into()));
            }
        }
        Ok(())
    }
}

impl Default for TrendCpConfig {
    fn default() -> Self {
        TrendCpConfig::defaults_for(Frequency::Daily)
    }
}

/// Detected trend changepoints with fitted slope changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangepointSet {
    pub instants: Vec<NaiveDateTime>,
    /// Fitted slope-change coefficient per instant (0 for custom points).
    pub magnitudes: Vec<f64>,
    /// Baseline slope of the detection fit, in target units per year.
    pub baseline_slope: f64,
}

impl ChangepointSet {
    pub fn empty() -> Self {
        ChangepointSet {
            instants: Vec::new(),
            magnitudes: Vec::new(),
            baseline_slope: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.instants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instants.is_empty()
    }
}

/// Mean aggregation over non-overlapping windows of `window` base periods,
/// anchored at the series start; a partial final window is dropped. NaN
/// values are excluded from window means; all-NaN windows are dropped.
/// Each aggregate carries its window's first timestamp.
pub fn aggregate_mean(series: &TimeSeries, window: usize) -> (Vec<NaiveDateTime>, Vec<f64>) {
    assert!(window >= 1);
    let ts = series.timestamps();
    let ys = series.values();
    let mut out_ts = Vec::new();
    let mut out_y = Vec::new();
    let mut start = 0;
    while start + window <= ts.len() {
        let chunk = &ys[start..start + window];
        let finite: Vec<f64> = chunk.iter().copied().filter(|v| v.is_finite()).collect();
        if !finite.is_empty() {
            out_ts.push(ts[start]);
            out_y.push(finite.iter().sum::<f64>() / finite.len() as f64);
        }
        start += window;
    }
    (out_ts, out_y)
}

/// Uniform candidate grid from the series start, with the forbidden head and
/// tail regions removed.
pub fn candidate_grid(
    series: &TimeSeries,
    spacing_periods: usize,
    forbidden_head_seconds: i64,
    forbidden_tail_seconds: i64,
) -> Vec<NaiveDateTime> {
    let period = series.frequency().period_seconds();
    let step = Duration::seconds(spacing_periods as i64 * period);
    let start = series.start();
    let end = series.end();
    let mut out = Vec::new();
    let mut t = start + step;
    while t < end {
        if (t - start).num_seconds() >= forbidden_head_seconds
            && (end - t).num_seconds() >= forbidden_tail_seconds
        {
            out.push(t);
        }
        t += step;
    }
    out
}

struct DetectionDesign {
    x0: DMatrix<f64>,
    x1: DMatrix<f64>,
    y: DVector<f64>,
    /// Index of the linear-trend column inside x0.
    slope_col: usize,
}

/// Shared regression assembly: unpenalized block (intercept, linear trend,
/// optional extra columns, yearly block with refit terms) and the penalized
/// hinge block.
fn build_trend_design(
    agg_ts: &[NaiveDateTime],
    agg_y: &[f64],
    origin: NaiveDateTime,
    span_end: NaiveDateTime,
    candidates: &[NaiveDateTime],
    yearly_order: usize,
    refit_every: Option<i64>,
) -> Result<DetectionDesign> {
    let n = agg_ts.len();
    let rows = time_features_at(agg_ts, origin);
    let ct: Vec<f64> = rows.iter().map(|r| r.ct).collect();
    let toy: Vec<f64> = rows.iter().map(|r| r.toy).collect();

    let mut x0_cols: Vec<Vec<f64>> = Vec::new();
    x0_cols.push(vec![1.0; n]);
    x0_cols.push(ct.clone());
    let slope_col = 1;

    let yearly = fourier_terms(
        &toy,
        &FourierSpec {
            phase_feature: PhaseFeature::Toy,
            period: 1.0,
            order: yearly_order,
        },
    )?;
    for col in &yearly {
        x0_cols.push(col.values.clone());
    }
    if let Some(every) = refit_every {
        if every > 0 {
            let mut boundary = origin + Duration::seconds(every);
            while boundary < span_end {
                let mask: Vec<f64> = agg_ts
                    .iter()
                    .map(|&t| if t > boundary { 1.0 } else { 0.0 })
                    .collect();
                for col in &yearly {
                    x0_cols.push(
                        col.values
                            .iter()
                            .zip(&mask)
                            .map(|(v, m)| v * m)
                            .collect(),
                    );
                }
                boundary += Duration::seconds(every);
            }
        }
    }

    let mut x1_cols: Vec<Vec<f64>> = Vec::with_capacity(candidates.len());
    for &cand in candidates {
        let cp_ct = years_since(origin, cand);
        x1_cols.push(ct.iter().map(|&c| (c - cp_ct).max(0.0)).collect());
    }

    let x0 = DMatrix::from_fn(n, x0_cols.len(), |i, j| x0_cols[j][i]);
    let x1 = DMatrix::from_fn(n, x1_cols.len(), |i, j| x1_cols[j][i]);
    let y = DVector::from_vec(agg_y.to_vec());
    Ok(DetectionDesign {
        x0,
        x1,
        y,
        slope_col,
    })
}

fn joined(x0: &DMatrix<f64>, x1: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x0.nrows();
    let mut x = DMatrix::zeros(n, x0.ncols() + x1.ncols());
    x.view_mut((0, 0), (n, x0.ncols())).copy_from(x0);
    x.view_mut((0, x0.ncols()), (n, x1.ncols())).copy_from(x1);
    x
}

/// Adaptively weighted L1 selection of the penalized block. Returns the
/// fitted coefficient per penalized column and the unpenalized coefficients.
fn select_penalized(
    x0: DMatrix<f64>,
    x1: DMatrix<f64>,
    y: DVector<f64>,
    lambda_fraction: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = y.len();
    let p0 = x0.ncols();
    let p1 = x1.ncols();
    let full = joined(&x0, &x1);
    let mut penalized = vec![false; p0 + p1];
    for flag in penalized.iter_mut().skip(p0) {
        *flag = true;
    }
    let w_full = adaptive_weights(&full, &y, &penalized, ADAPTIVE_GAMMA, ADAPTIVE_EPSILON)?;
    let weights: Vec<f64> = w_full[p0..].to_vec();

    // Lambda is set relative to lambda_max of the projected problem, so a
    // fraction of 1 selects nothing by construction.
    let proj = MixedProjection::new(&x0, &DMatrix::zeros(n, 0), 0.0)?
        .expect("x0 always has columns here");
    let x1_t = proj.residualize_matrix(&x1);
    let y_t = proj.residualize_vector(&y);
    let lam_cd = lambda_fraction * lambda_max(&x1_t, &y_t, &weights)?;

    let problem = MixedProblem {
        x0,
        x1,
        x2: DMatrix::zeros(n, 0),
        y,
        lambda1: 2.0 * n as f64 * lam_cd,
        lambda2: 0.0,
        l1_weights: weights,
    };
    let sol = fit_mixed_two_step(&problem)?;
    Ok((sol.beta0, sol.beta1))
}

/// Two-sided Bonferroni |t| threshold at family-wise level 5% for a scan
/// over `family_size` penalized columns.
fn bonferroni_t(family_size: usize) -> f64 {
    let m = family_size.max(1) as f64;
    crate::volatility::normal_quantile(1.0 - 0.025 / m).unwrap_or(6.0)
}

/// Precomputed Gram-matrix view of `[X0, X1]` against the response, so
/// subset refits cost O(p^3) instead of O(n p^2).
struct GramCache {
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    p0: usize,
    n: usize,
}

struct SubsetFit {
    beta: DVector<f64>,
    sse: f64,
    /// Diagonal of the inverse sub-Gram, for standard errors.
    inv_diag: Vec<f64>,
}

impl GramCache {
    fn new(x0: &DMatrix<f64>, x1: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let joined = joined(x0, x1);
        GramCache {
            gram: joined.tr_mul(&joined),
            xty: joined.tr_mul(y),
            yty: y.norm_squared(),
            p0: x0.ncols(),
            n: y.len(),
        }
    }

    /// OLS on the unpenalized block plus the hinge columns in `selected`
    /// (indices into X1).
    fn fit_subset(&self, selected: &[usize]) -> Option<SubsetFit> {
        let p = self.p0 + selected.len();
        let cols: Vec<usize> = (0..self.p0)
            .chain(selected.iter().map(|&j| self.p0 + j))
            .collect();
        let mut gram = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        for (a, &ca) in cols.iter().enumerate() {
            rhs[a] = self.xty[ca];
            for (b, &cb) in cols.iter().enumerate() {
                gram[(a, b)] = self.gram[(ca, cb)];
            }
        }
        let chol = match nalgebra::linalg::Cholesky::new(gram.clone()) {
            Some(c) => c,
            None => {
                // Collinear selection; a whisper of ridge keeps the refit
                // usable and the affected t statistics near zero.
                let jitter = 1e-10 * gram.trace() / p as f64;
                for j in 0..p {
                    gram[(j, j)] += jitter;
                }
                nalgebra::linalg::Cholesky::new(gram)?
            }
        };
        let beta = chol.solve(&rhs);
        let sse = (self.yty - beta.dot(&rhs)).max(0.0);
        let inv = chol.inverse();
        let inv_diag = (0..p).map(|j| inv[(j, j)]).collect();
        Some(SubsetFit {
            beta,
            sse,
            inv_diag,
        })
    }
}

/// Backward elimination of the L1-selected columns: refits OLS on
/// `[x0, x1[selected]]`, drops the selected column with the smallest |t|
/// while it is below `t_threshold`, and returns the surviving indices with
/// their refit coefficients plus the final unpenalized coefficients.
fn significance_filter(
    cache: &GramCache,
    mut selected: Vec<usize>,
    t_threshold: f64,
) -> Result<(Vec<usize>, Vec<f64>, DVector<f64>)> {
    let p0 = cache.p0;
    loop {
        let fit = cache.fit_subset(&selected).ok_or_else(|| {
            Error::Numeric("significance refit system is singular".into())
        })?;
        if selected.is_empty() || t_threshold == 0.0 {
            let coefs = (0..selected.len()).map(|k| fit.beta[p0 + k]).collect();
            let beta0 = fit.beta.rows(0, p0).into_owned();
            return Ok((selected, coefs, beta0));
        }
        let p = p0 + selected.len();
        let dof = (cache.n.saturating_sub(p)).max(1) as f64;
        let sigma2 = fit.sse / dof;
        let mut worst: Option<(usize, f64)> = None;
        for k in 0..selected.len() {
            let se = (sigma2 * fit.inv_diag[p0 + k]).max(0.0).sqrt();
            let t = if se > 0.0 {
                (fit.beta[p0 + k] / se).abs()
            } else {
                f64::INFINITY
            };
            if worst.map_or(true, |(_, wt)| t < wt) {
                worst = Some((k, t));
            }
        }
        match worst {
            Some((k, t)) if t < t_threshold => {
                selected.remove(k);
            }
            _ => {
                let coefs = (0..selected.len()).map(|k| fit.beta[p0 + k]).collect();
                let beta0 = fit.beta.rows(0, p0).into_owned();
                return Ok((selected, coefs, beta0));
            }
        }
    }
}

/// Iterative refinement of the selected hinges: relocate each survivor to
/// the candidate position minimizing the refit SSE (noise smears a single
/// kink across neighbouring candidates), then re-run the significance
/// elimination, until the selection stabilizes.
fn refine_selection(
    cache: &GramCache,
    n_candidates: usize,
    mut kept: Vec<usize>,
    t_threshold: f64,
) -> Result<(Vec<usize>, Vec<f64>, DVector<f64>)> {
    for _round in 0..10 {
        let mut changed = false;
        // Relocation pass, one hinge at a time.
        for slot in 0..kept.len() {
            let current = kept[slot];
            let Some(base) = cache.fit_subset(&kept) else {
                break;
            };
            let mut best = (current, base.sse);
            for j in 0..n_candidates {
                if kept.contains(&j) {
                    continue;
                }
                let mut trial = kept.clone();
                trial[slot] = j;
                if let Some(fit) = cache.fit_subset(&trial) {
                    if fit.sse < best.1 * (1.0 - 1e-12) {
                        best = (j, fit.sse);
                    }
                }
            }
            if best.0 != current {
                kept[slot] = best.0;
                changed = true;
            }
        }
        kept.sort_unstable();
        kept.dedup();

        // Consolidation pass: replace a pair of hinges with one if the lost
        // degree of freedom is insignificant (F-to-remove at t^2), the way a
        // single kink smeared over two candidates collapses back to one.
        if t_threshold > 0.0 && kept.len() >= 2 {
            'pairs: loop {
                let Some(base) = cache.fit_subset(&kept) else {
                    break;
                };
                let dof = (cache.n.saturating_sub(cache.p0 + kept.len())).max(1) as f64;
                let sigma2 = (base.sse / dof).max(f64::MIN_POSITIVE);
                for a in 0..kept.len() {
                    for b in a + 1..kept.len() {
                        let rest: Vec<usize> = kept
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| *i != a && *i != b)
                            .map(|(_, &j)| j)
                            .collect();
                        let mut best: Option<(usize, f64)> = None;
                        for j in 0..n_candidates {
                            if rest.contains(&j) {
                                continue;
                            }
                            let mut trial = rest.clone();
                            trial.push(j);
                            trial.sort_unstable();
                            if let Some(fit) = cache.fit_subset(&trial) {
                                if best.map_or(true, |(_, s)| fit.sse < s) {
                                    best = Some((j, fit.sse));
                                }
                            }
                        }
                        if let Some((j, sse_new)) = best {
                            let f_stat = (sse_new - base.sse) / sigma2;
                            if f_stat <= t_threshold * t_threshold {
                                let mut merged = rest;
                                merged.push(j);
                                merged.sort_unstable();
                                kept = merged;
                                changed = true;
                                if kept.len() < 2 {
                                    break 'pairs;
                                }
                                continue 'pairs;
                            }
                        }
                    }
                }
                break;
            }
        }

        let (survivors, coefs, beta0) = significance_filter(cache, kept.clone(), t_threshold)?;
        if survivors == kept && !changed {
            return Ok((survivors, coefs, beta0));
        }
        kept = survivors;
    }
    significance_filter(cache, kept, t_threshold)
}

/// Trend changepoint detection: optional aggregation, uniform candidates
/// minus forbidden regions, partial-penalty fit with adaptive weights, a
/// significance refit with local relocation of the surviving hinges, then
/// minimum-distance post-filtering and the custom-changepoint merge.
pub fn detect_trend_changepoints(
    series: &TimeSeries,
    config: &TrendCpConfig,
) -> Result<ChangepointSet> {
    config.validate()?;

    let (mut agg_ts, mut agg_y) = match config.aggregation_window {
        Some(w) if w > 1 => aggregate_mean(series, w),
        _ => (series.timestamps().to_vec(), series.values().to_vec()),
    };
    // Keep only finite rows (unaggregated path may carry NaN).
    let keep: Vec<usize> = (0..agg_y.len()).filter(|&i| agg_y[i].is_finite()).collect();
    agg_ts = keep.iter().map(|&i| agg_ts[i]).collect();
    agg_y = keep.iter().map(|&i| agg_y[i]).collect();

    let candidates = candidate_grid(
        series,
        config.candidate_spacing,
        config.forbidden_head_seconds,
        config.forbidden_tail_seconds,
    );
    if candidates.len() < 2 {
        return Err(Error::Data(format!(
            "only {} candidate changepoints fit between the forbidden regions; \
             need at least 2",
            candidates.len()
        )));
    }
    if agg_ts.len() < candidates.len() + 2 * config.yearly_order + 2 {
        return Err(Error::Data(format!(
            "{} aggregated observations cannot support {} candidates plus the \
             yearly block",
            agg_ts.len(),
            candidates.len()
        )));
    }

    let design = build_trend_design(
        &agg_ts,
        &agg_y,
        series.start(),
        series.end(),
        &candidates,
        config.yearly_order,
        config.seasonality_refit_every_seconds,
    )?;
    let slope_col = design.slope_col;
    let x0 = design.x0;
    let x1 = design.x1;
    let y = design.y;
    let (_, beta1) = select_penalized(x0.clone(), x1.clone(), y.clone(), config.lambda_fraction)?;

    let selected: Vec<usize> = (0..candidates.len()).filter(|&i| beta1[i] != 0.0).collect();
    let t_threshold = config
        .significance_t_threshold
        .unwrap_or_else(|| bonferroni_t(candidates.len()));
    let cache = GramCache::new(&x0, &x1, &y);
    let (kept, magnitudes, beta0) =
        refine_selection(&cache, candidates.len(), selected, t_threshold)?;
    let detected = ChangepointSet {
        instants: kept.iter().map(|&i| candidates[i]).collect(),
        magnitudes,
        baseline_slope: beta0[slope_col],
    };
    let filtered = post_filter(&detected, config.min_distance_seconds);
    Ok(merge_custom(
        &filtered,
        &config.custom_changepoints,
        config.min_distance_to_custom_seconds,
    ))
}

fn gap_seconds(a: NaiveDateTime, b: NaiveDateTime) -> i64 {
    (b - a).num_seconds().abs()
}

/// Minimum-distance filter: groups instants closer than `min_distance`,
/// repeatedly drops the smaller-magnitude member of the first too-close
/// pair, and after every removal re-adds any dropped point that is
/// compatible with the surviving set, so the result is maximal.
pub fn post_filter(candidates: &ChangepointSet, min_distance_seconds: i64) -> ChangepointSet {
    let m = candidates.len();
    if m <= 1 || min_distance_seconds == 0 {
        return candidates.clone();
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by_key(|&i| candidates.instants[i]);
    let instants: Vec<NaiveDateTime> = order.iter().map(|&i| candidates.instants[i]).collect();
    let mags: Vec<f64> = order.iter().map(|&i| candidates.magnitudes[i]).collect();

    // Split into groups of chained too-close neighbours; groups are
    // independent because adjacent groups are separated by >= min_distance.
    let mut kept: Vec<usize> = Vec::new();
    let mut group_start = 0;
    for i in 0..m {
        let boundary = i + 1 == m
            || gap_seconds(instants[i], instants[i + 1]) >= min_distance_seconds;
        if boundary {
            let group: Vec<usize> = (group_start..=i).collect();
            kept.extend(filter_group(&instants, &mags, &group, min_distance_seconds));
            group_start = i + 1;
        }
    }
    kept.sort();
    ChangepointSet {
        instants: kept.iter().map(|&i| instants[i]).collect(),
        magnitudes: kept.iter().map(|&i| mags[i]).collect(),
        baseline_slope: candidates.baseline_slope,
    }
}

fn filter_group(
    instants: &[NaiveDateTime],
    mags: &[f64],
    group: &[usize],
    min_d: i64,
) -> Vec<usize> {
    let mut active: Vec<bool> = vec![true; group.len()];
    let compatible = |g: usize, active: &[bool]| -> bool {
        group.iter().enumerate().all(|(h, &idx)| {
            !active[h] || h == g || gap_seconds(instants[group[g]], instants[idx]) >= min_d
        })
    };
    let cap = 4 * group.len() * group.len() + 8;
    for _ in 0..cap {
        // First adjacent active pair that is too close, scanning left to right.
        let actives: Vec<usize> = (0..group.len()).filter(|&h| active[h]).collect();
        let pair = actives.windows(2).find(|w| {
            gap_seconds(instants[group[w[0]]], instants[group[w[1]]]) < min_d
        });
        let Some(w) = pair else { break };
        // Drop the smaller absolute magnitude; on a tie drop the later one.
        let drop_h = if mags[group[w[0]]].abs() < mags[group[w[1]]].abs() {
            w[0]
        } else {
            w[1]
        };
        active[drop_h] = false;
        // Trace back: re-add any dropped point compatible with the actives.
        loop {
            let mut readded = false;
            for h in 0..group.len() {
                if !active[h] && compatible(h, &active) {
                    active[h] = true;
                    readded = true;
                }
            }
            if !readded {
                break;
            }
        }
    }
    group
        .iter()
        .enumerate()
        .filter(|(h, _)| active[*h])
        .map(|(_, &idx)| idx)
        .collect()
}

/// Drops detected points within `min_distance_to_custom` of a custom point,
/// then appends the custom points (magnitude 0, no fitted slope change).
pub fn merge_custom(
    detected: &ChangepointSet,
    custom: &[NaiveDateTime],
    min_distance_to_custom_seconds: i64,
) -> ChangepointSet {
    if custom.is_empty() {
        return detected.clone();
    }
    let mut instants = Vec::new();
    let mut magnitudes = Vec::new();
    for (i, &d) in detected.instants.iter().enumerate() {
        let near_custom = custom
            .iter()
            .any(|&c| gap_seconds(d, c) < min_distance_to_custom_seconds);
        if !near_custom {
            instants.push(d);
            magnitudes.push(detected.magnitudes[i]);
        }
    }
    for &c in custom {
        instants.push(c);
        magnitudes.push(0.0);
    }
    let mut order: Vec<usize> = (0..instants.len()).collect();
    order.sort_by_key(|&i| instants[i]);
    ChangepointSet {
        instants: order.iter().map(|&i| instants[i]).collect(),
        magnitudes: order.iter().map(|&i| magnitudes[i]).collect(),
        baseline_slope: detected.baseline_slope,
    }
}

/// A detected change in one seasonal component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalityChangepoint {
    /// Phase-feature name of the affected component (e.g. "tow").
    pub component: String,
    pub instant: NaiveDateTime,
}

/// Configuration for seasonality changepoint detection. Candidates share the
/// trend grid rule; no aggregation is applied so sub-weekly phase
/// information survives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalityCpConfig {
    /// Seasonal components scanned for changes.
    pub components: Vec<FourierSpec>,
    pub candidate_spacing: usize,
    pub forbidden_head_seconds: i64,
    /// Default 365 days: no seasonality changepoints near the series end.
    pub forbidden_tail_seconds: i64,
    pub lambda_fraction: f64,
    /// Backward-elimination |t| threshold for surviving truncated terms;
    /// `None` picks the Bonferroni threshold for the scanned family,
    /// 0 disables.
    #[serde(default)]
    pub significance_t_threshold: Option<f64>,
    /// Trend changepoints detected beforehand; their hinge terms enter the
    /// regression unpenalized.
    #[serde(default)]
    pub trend_changepoints: Vec<NaiveDateTime>,
}

impl SeasonalityCpConfig {
    pub fn defaults_for(frequency: Frequency, components: Vec<FourierSpec>) -> Self {
        let period = frequency.period_seconds();
        let spacing = ((15 * SECONDS_PER_DAY) / period).max(1) as usize;
        SeasonalityCpConfig {
            components,
            candidate_spacing: spacing,
            forbidden_head_seconds: spacing as i64 * period,
            forbidden_tail_seconds: 365 * SECONDS_PER_DAY,
            lambda_fraction: 1e-3,
            significance_t_threshold: None,
            trend_changepoints: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Config(
                "seasonality changepoint detection needs at least one component".into(),
            ));
        }
        if self.candidate_spacing == 0 {
            return Err(Error::Config("candidate spacing must be > 0".into()));
        }
        if !(self.lambda_fraction > 0.0 && self.lambda_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "lambda fraction must be in (0, 1], got {}",
                self.lambda_fraction
            )));
        }
        for c in &self.components {
            c.validate()?;
        }
        Ok(())
    }
}

/// Seasonality changepoint detection via truncated Fourier terms with
/// adaptive L1 over all truncated columns. A component reports a change at
/// a candidate when any of its truncated terms survives.
pub fn detect_seasonality_changepoints(
    series: &TimeSeries,
    config: &SeasonalityCpConfig,
) -> Result<Vec<SeasonalityChangepoint>> {
    config.validate()?;
    let keep: Vec<usize> = (0..series.len())
        .filter(|&i| series.values()[i].is_finite())
        .collect();
    let ts: Vec<NaiveDateTime> = keep.iter().map(|&i| series.timestamps()[i]).collect();
    let y: Vec<f64> = keep.iter().map(|&i| series.values()[i]).collect();

    let candidates = candidate_grid(
        series,
        config.candidate_spacing,
        config.forbidden_head_seconds,
        config.forbidden_tail_seconds,
    );
    if candidates.is_empty() {
        return Ok(Vec::new());
    }

    let origin = series.start();
    let rows = time_features_at(&ts, origin);
    let ct: Vec<f64> = rows.iter().map(|r| r.ct).collect();
    let n = ts.len();

    // Unpenalized block: intercept, trend, trend hinges, base seasonality.
    let mut x0_cols: Vec<Vec<f64>> = vec![vec![1.0; n], ct.clone()];
    for &cp in &config.trend_changepoints {
        let cp_ct = years_since(origin, cp);
        x0_cols.push(ct.iter().map(|&c| (c - cp_ct).max(0.0)).collect());
    }
    let mut base_blocks: Vec<Vec<Vec<f64>>> = Vec::new();
    for comp in &config.components {
        let phase: Vec<f64> = rows.iter().map(|r| comp.phase_feature.extract(r)).collect();
        let cols = fourier_terms(&phase, comp)?;
        let vals: Vec<Vec<f64>> = cols.into_iter().map(|c| c.values).collect();
        for v in &vals {
            x0_cols.push(v.clone());
        }
        base_blocks.push(vals);
    }

    // Penalized block: truncated copies of every base column per candidate.
    let mut x1_cols: Vec<Vec<f64>> = Vec::new();
    let mut x1_tags: Vec<(usize, usize)> = Vec::new(); // (component, candidate)
    for (ci, block) in base_blocks.iter().enumerate() {
        for (ki, &cand) in candidates.iter().enumerate() {
            let mask: Vec<f64> = ts
                .iter()
                .map(|&t| if t > cand { 1.0 } else { 0.0 })
                .collect();
            for col in block {
                x1_cols.push(col.iter().zip(&mask).map(|(v, m)| v * m).collect());
                x1_tags.push((ci, ki));
            }
        }
    }
    if n < x0_cols.len() + 2 {
        return Err(Error::Data(format!(
            "{n} observations cannot support the {} unpenalized detection columns",
            x0_cols.len()
        )));
    }

    let x0 = DMatrix::from_fn(n, x0_cols.len(), |i, j| x0_cols[j][i]);
    let x1 = DMatrix::from_fn(n, x1_cols.len(), |i, j| x1_cols[j][i]);
    let y = DVector::from_vec(y);
    let (_, beta1) = select_penalized(x0.clone(), x1.clone(), y.clone(), config.lambda_fraction)?;

    let selected: Vec<usize> = (0..x1.ncols()).filter(|&j| beta1[j] != 0.0).collect();
    let t_threshold = config
        .significance_t_threshold
        .unwrap_or_else(|| bonferroni_t(x1.ncols()));
    let cache = GramCache::new(&x0, &x1, &y);
    let (kept, _, _) = significance_filter(&cache, selected, t_threshold)?;

    let mut hits: Vec<(usize, usize)> = Vec::new();
    for &j in &kept {
        let tag = x1_tags[j];
        if !hits.contains(&tag) {
            hits.push(tag);
        }
    }
    hits.sort();
    Ok(hits
        .into_iter()
        .map(|(ci, ki)| SeasonalityChangepoint {
            component: config.components[ci].phase_feature.name().to_string(),
            instant: candidates[ki],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timebase::parse_timestamp;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    fn ts(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    fn daily_series(start: &str, values: Vec<f64>) -> TimeSeries {
        let start = ts(start);
        let timestamps: Vec<_> = (0..values.len() as i64)
            .map(|i| start + Duration::days(i))
            .collect();
        TimeSeries::new(timestamps, values, Frequency::Daily).unwrap()
    }

    /// Four years of daily data: piecewise-linear trend with one break,
    /// yearly sinusoid, Gaussian noise.
    fn synthetic_break(seed: u64, noise_frac: f64) -> (TimeSeries, NaiveDateTime) {
        let n = 4 * 365;
        let break_idx = n / 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = ts("2015-01-01");
        let mut values = Vec::with_capacity(n);
        // Slope +1/day then -1/day; yearly amplitude 50.
        let signal: Vec<f64> = (0..n)
            .map(|i| {
                let trend = if i < break_idx {
                    i as f64
                } else {
                    break_idx as f64 - (i - break_idx) as f64
                };
                let toy = (i % 365) as f64 / 365.0;
                trend + 50.0 * (2.0 * PI * toy).sin()
            })
            .collect();
        let range = signal.iter().cloned().fold(f64::MIN, f64::max)
            - signal.iter().cloned().fold(f64::MAX, f64::min);
        let normal = Normal::new(0.0, noise_frac * range).unwrap();
        for (i, s) in signal.iter().enumerate() {
            let _ = i;
            values.push(s + normal.sample(&mut rng));
        }
        let series = daily_series("2015-01-01", values);
        (series, start + Duration::days(break_idx as i64))
    }

    fn synthetic_null(seed: u64, noise_frac: f64) -> TimeSeries {
        let n = 4 * 365;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let signal: Vec<f64> = (0..n)
            .map(|i| {
                let toy = (i % 365) as f64 / 365.0;
                0.8 * i as f64 + 50.0 * (2.0 * PI * toy).sin()
            })
            .collect();
        let range = signal.iter().cloned().fold(f64::MIN, f64::max)
            - signal.iter().cloned().fold(f64::MAX, f64::min);
        let normal = Normal::new(0.0, noise_frac * range).unwrap();
        let values: Vec<f64> = signal.iter().map(|s| s + normal.sample(&mut rng)).collect();
        daily_series("2015-01-01", values)
    }

    #[test]
    fn aggregation_window_one_is_identity() {
        let series = daily_series("2020-01-01", (0..30).map(|i| i as f64).collect());
        let (ts_out, y_out) = aggregate_mean(&series, 1);
        assert_eq!(ts_out, series.timestamps());
        assert_eq!(y_out, series.values());
    }

    #[test]
    fn aggregation_drops_partial_window() {
        let series = daily_series("2020-01-01", (0..10).map(|i| i as f64).collect());
        let (ts_out, y_out) = aggregate_mean(&series, 3);
        assert_eq!(ts_out.len(), 3);
        assert_eq!(y_out, vec![1.0, 4.0, 7.0]);
        assert_eq!(ts_out[1], ts("2020-01-04"));
    }

    #[test]
    fn candidates_respect_forbidden_regions() {
        let series = daily_series("2020-01-01", vec![0.0; 200]);
        let grid = candidate_grid(&series, 15, 15 * 86_400, 30 * 86_400);
        assert!(!grid.is_empty());
        for &c in &grid {
            assert!((c - series.start()).num_seconds() >= 15 * 86_400);
            assert!((series.end() - c).num_seconds() >= 30 * 86_400);
        }
    }

    #[test]
    fn detects_single_break() {
        let (series, truth) = synthetic_break(42, 0.02);
        let config = TrendCpConfig::defaults_for(Frequency::Daily);
        let found = detect_trend_changepoints(&series, &config).unwrap();
        assert!(
            !found.is_empty(),
            "no changepoints found on a series with a slope break"
        );
        let nearest = found
            .instants
            .iter()
            .map(|&i| gap_seconds(i, truth))
            .min()
            .unwrap();
        assert!(
            nearest <= 15 * 86_400,
            "nearest detection {}s from the truth",
            nearest
        );
    }

    #[test]
    fn null_series_yields_zero_changepoints() {
        let series = synthetic_null(7, 0.02);
        let config = TrendCpConfig::defaults_for(Frequency::Daily);
        let found = detect_trend_changepoints(&series, &config).unwrap();
        assert!(
            found.is_empty(),
            "spurious changepoints on a pure trend: {:?}",
            found.instants
        );
    }

    #[test]
    fn lambda_fraction_one_selects_nothing() {
        let (series, _) = synthetic_break(3, 0.02);
        let config = TrendCpConfig {
            lambda_fraction: 1.0,
            ..TrendCpConfig::defaults_for(Frequency::Daily)
        };
        let found = detect_trend_changepoints(&series, &config).unwrap();
        assert!(found.is_empty());
    }

    #[test]
    fn detection_invariant_to_level_shift() {
        let (series, _) = synthetic_break(11, 0.02);
        let shifted = TimeSeries::new(
            series.timestamps().to_vec(),
            series.values().iter().map(|v| v + 1000.0).collect(),
            Frequency::Daily,
        )
        .unwrap();
        let config = TrendCpConfig::defaults_for(Frequency::Daily);
        let a = detect_trend_changepoints(&series, &config).unwrap();
        let b = detect_trend_changepoints(&shifted, &config).unwrap();
        assert_eq!(a.instants, b.instants);
    }

    #[test]
    fn custom_changepoints_override_near_detections() {
        let (series, truth) = synthetic_break(42, 0.02);
        let custom = truth + Duration::days(2);
        let config = TrendCpConfig {
            custom_changepoints: vec![custom],
            min_distance_to_custom_seconds: 20 * 86_400,
            ..TrendCpConfig::defaults_for(Frequency::Daily)
        };
        let found = detect_trend_changepoints(&series, &config).unwrap();
        assert!(found.instants.contains(&custom));
        for (&i, &m) in found.instants.iter().zip(&found.magnitudes) {
            if i != custom {
                assert!(gap_seconds(i, custom) >= 20 * 86_400);
            } else {
                assert_eq!(m, 0.0);
            }
        }
    }

    fn cp_set(days: &[i64], mags: &[f64]) -> ChangepointSet {
        let base = ts("2020-01-01");
        ChangepointSet {
            instants: days.iter().map(|&d| base + Duration::days(d)).collect(),
            magnitudes: mags.to_vec(),
            baseline_slope: 0.0,
        }
    }

    #[test]
    fn post_filter_keeps_larger_of_close_pair() {
        let set = cp_set(&[0, 1], &[2.0, -1.0]);
        let out = post_filter(&set, 2 * 86_400);
        assert_eq!(out.len(), 1);
        assert_eq!(out.magnitudes, vec![2.0]);
    }

    #[test]
    fn post_filter_readds_first_point() {
        // c1 < c2 < c3, all adjacent pairs close, 1 and 3 far apart:
        // drop 1 (vs 2), drop 2 (vs 3), then 1 comes back.
        let set = cp_set(&[0, 9, 18], &[1.0, 2.0, 3.0]);
        let out = post_filter(&set, 10 * 86_400);
        assert_eq!(out.len(), 2);
        assert_eq!(out.magnitudes, vec![1.0, 3.0]);
    }

    #[test]
    fn post_filter_identity_when_spread() {
        let set = cp_set(&[0, 30, 65], &[1.0, -2.0, 0.5]);
        let out = post_filter(&set, 10 * 86_400);
        assert_eq!(out.instants, set.instants);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn post_filter_gaps_always_respected(
            days in proptest::collection::vec(0i64..200, 1..12),
            seed in 0u64..1000,
        ) {
            let mut days = days;
            days.sort();
            days.dedup();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mags: Vec<f64> = days.iter().map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let set = cp_set(&days, &mags);
            let out = post_filter(&set, 10 * 86_400);
            for w in out.instants.windows(2) {
                prop_assert!(gap_seconds(w[0], w[1]) >= 10 * 86_400);
            }
            // Kept instants are a subset of the input.
            for i in &out.instants {
                prop_assert!(set.instants.contains(i));
            }
        }
    }

    /// Daily series whose weekly amplitude doubles at the midpoint.
    fn synthetic_amplitude_shift(seed: u64) -> (TimeSeries, NaiveDateTime) {
        let n = 3 * 365;
        let break_idx = n / 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.3).unwrap();
        let start = ts("2015-01-01");
        let values: Vec<f64> = (0..n)
            .map(|i| {
                let tow = (start + Duration::days(i as i64))
                    .and_utc()
                    .timestamp(); // placeholder, replaced below
                let _ = tow;
                let dow = (i + 4) % 7; // 2015-01-01 is a Thursday
                let amp = if i < break_idx { 2.0 } else { 4.0 };
                amp * (2.0 * PI * dow as f64 / 7.0).sin() + normal.sample(&mut rng)
            })
            .collect();
        let series = daily_series("2015-01-01", values);
        (series, start + Duration::days(break_idx as i64))
    }

    #[test]
    fn seasonality_shift_detected() {
        let (series, truth) = synthetic_amplitude_shift(5);
        let config = SeasonalityCpConfig {
            forbidden_tail_seconds: 90 * 86_400,
            lambda_fraction: 5e-2,
            ..SeasonalityCpConfig::defaults_for(
                Frequency::Daily,
                vec![FourierSpec::new(PhaseFeature::Tow, 2)],
            )
        };
        let found = detect_seasonality_changepoints(&series, &config).unwrap();
        assert!(!found.is_empty(), "amplitude shift not detected");
        assert!(found.iter().all(|s| s.component == "tow"));
        let nearest = found
            .iter()
            .map(|s| gap_seconds(s.instant, truth))
            .min()
            .unwrap();
        assert!(
            nearest <= 15 * 86_400,
            "nearest seasonality detection {}s from truth",
            nearest
        );
    }

    #[test]
    fn stationary_seasonality_no_changepoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(0.0, 0.3).unwrap();
        let values: Vec<f64> = (0..3 * 365)
            .map(|i| {
                let dow = (i + 4) % 7;
                3.0 * (2.0 * PI * dow as f64 / 7.0).sin() + normal.sample(&mut rng)
            })
            .collect();
        let series = daily_series("2015-01-01", values);
        let config = SeasonalityCpConfig {
            forbidden_tail_seconds: 90 * 86_400,
            lambda_fraction: 5e-2,
            ..SeasonalityCpConfig::defaults_for(
                Frequency::Daily,
                vec![FourierSpec::new(PhaseFeature::Tow, 2)],
            )
        };
        let found = detect_seasonality_changepoints(&series, &config).unwrap();
        assert!(found.is_empty(), "spurious seasonality changes: {found:?}");
    }

    #[test]
    fn seasonality_tail_window_respected() {
        let (series, _) = synthetic_amplitude_shift(6);
        let config = SeasonalityCpConfig {
            forbidden_tail_seconds: 365 * 86_400,
            lambda_fraction: 5e-2,
            ..SeasonalityCpConfig::defaults_for(
                Frequency::Daily,
                vec![FourierSpec::new(PhaseFeature::Tow, 2)],
            )
        };
        let found = detect_seasonality_changepoints(&series, &config).unwrap();
        for s in &found {
            assert!((series.end() - s.instant).num_seconds() >= 365 * 86_400);
        }
    }
}
