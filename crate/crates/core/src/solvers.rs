//! Linear fitters: OLS/ridge via normal equations, (adaptive) lasso via
//! cyclic coordinate descent, the two-step partial-penalty solver, and a
//! smoothed-pinball quantile fitter.
//!
//! Conventions:
//! - [`fit_ridge`] minimizes ||y - X b||^2 + lambda2 ||b_masked||^2.
//! - [`fit_lasso_cd`] minimizes (1/(2n)) ||y - X b||^2 + lambda1 sum_j w_j |b_j|,
//!   so `||X^T y||_inf / n` is the smallest lambda1 with an all-zero solution
//!   on fully penalized problems.
//! - [`fit_mixed_two_step`] minimizes
//!   ||y - X0 b0 - X1 b1 - X2 b2||^2 + lambda1 sum_j w_j |b1_j| + lambda2 ||b2||^2.

use nalgebra::{DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Coordinate-descent stopping tolerance on the maximum coefficient change.
pub const CD_TOL: f64 = 1e-7;
/// Maximum coordinate-descent sweeps.
pub const CD_MAX_SWEEPS: usize = 10_000;

/// Per-column penalty kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Penalty {
    Unpenalized,
    L1,
    L2,
}

/// Declarative penalty structure over a design matrix, in the plain
/// sum-of-squares convention of [`fit_mixed_two_step`].
#[derive(Debug, Clone)]
pub struct PenaltySpec {
    pub l1_weight: f64,
    pub l2_weight: f64,
    /// Adaptive weights for L1 columns, aligned with the full column set
    /// (entries for non-L1 columns are ignored). `None` means unit weights.
    pub per_column_l1_weights: Option<Vec<f64>>,
    pub penalty_mask: Vec<Penalty>,
}

impl PenaltySpec {
    pub fn validate(&self, n_cols: usize) -> Result<()> {
        if self.penalty_mask.len() != n_cols {
            return Err(Error::Config(format!(
                "penalty mask covers {} columns, design matrix has {n_cols}",
                self.penalty_mask.len()
            )));
        }
        if !(self.l1_weight.is_finite() && self.l1_weight >= 0.0) {
            return Err(Error::Config("l1 weight must be finite and >= 0".into()));
        }
        if !(self.l2_weight.is_finite() && self.l2_weight >= 0.0) {
            return Err(Error::Config("l2 weight must be finite and >= 0".into()));
        }
        if let Some(w) = &self.per_column_l1_weights {
            if w.len() != n_cols {
                return Err(Error::Config(
                    "per-column l1 weights not aligned with columns".into(),
                ));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Config("l1 weights must be finite and >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Fits a linear model under a [`PenaltySpec`], dispatching to the closed
/// form, coordinate descent, or the two-step mixed solver depending on
/// which penalties appear. Objective, in the plain sum-of-squares
/// convention: ||y - X b||^2 + l1_weight sum w_j |b_j| + l2_weight ||b_L2||^2.
pub fn fit_penalized(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &PenaltySpec,
) -> Result<DVector<f64>> {
    let p = x.ncols();
    spec.validate(p)?;
    let n = x.nrows() as f64;
    let has_l1 = spec.penalty_mask.iter().any(|m| *m == Penalty::L1);
    let has_l2 = spec.penalty_mask.iter().any(|m| *m == Penalty::L2);
    if !has_l1 {
        let mask: Vec<bool> = spec.penalty_mask.iter().map(|m| *m == Penalty::L2).collect();
        return fit_ridge(x, y, spec.l2_weight, &mask);
    }
    let col_weight = |j: usize| -> f64 {
        match spec.penalty_mask[j] {
            Penalty::L1 => spec
                .per_column_l1_weights
                .as_ref()
                .map_or(1.0, |w| w[j]),
            _ => 0.0,
        }
    };
    if !has_l2 {
        let weights: Vec<f64> = (0..p).map(col_weight).collect();
        return fit_lasso_cd(x, y, spec.l1_weight / (2.0 * n), &weights);
    }
    // General case: split the columns into blocks and reassemble.
    let idx_of = |kind: Penalty| -> Vec<usize> {
        (0..p).filter(|&j| spec.penalty_mask[j] == kind).collect()
    };
    let (i0, i1, i2) = (
        idx_of(Penalty::Unpenalized),
        idx_of(Penalty::L1),
        idx_of(Penalty::L2),
    );
    let take = |idx: &[usize]| -> DMatrix<f64> {
        let mut m = DMatrix::zeros(x.nrows(), idx.len());
        for (k, &j) in idx.iter().enumerate() {
            m.view_mut((0, k), (x.nrows(), 1)).copy_from(&x.column(j));
        }
        m
    };
    let problem = MixedProblem {
        x0: take(&i0),
        x1: take(&i1),
        x2: take(&i2),
        y: y.clone(),
        lambda1: spec.l1_weight,
        lambda2: spec.l2_weight,
        l1_weights: i1.iter().map(|&j| col_weight(j)).collect(),
    };
    let sol = fit_mixed_two_step(&problem)?;
    let mut beta = DVector::<f64>::zeros(p);
    for (k, &j) in i0.iter().enumerate() {
        beta[j] = sol.beta0[k];
    }
    for (k, &j) in i1.iter().enumerate() {
        beta[j] = sol.beta1[k];
    }
    for (k, &j) in i2.iter().enumerate() {
        beta[j] = sol.beta2[k];
    }
    Ok(beta)
}

/// Ridge / OLS by normal equations with a diagonal penalty that is zero on
/// unpenalized columns. `penalized[j]` marks columns receiving lambda2.
pub fn fit_ridge(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda2: f64,
    penalized: &[bool],
) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    if n == 0 || y.len() != n {
        return Err(Error::Data(format!(
            "ridge needs matching rows: X has {n}, y has {}",
            y.len()
        )));
    }
    if penalized.len() != p {
        return Err(Error::Config("penalty mask not aligned with columns".into()));
    }
    if !(lambda2.is_finite() && lambda2 >= 0.0) {
        return Err(Error::Config("lambda2 must be finite and >= 0".into()));
    }
    let mut gram = x.tr_mul(x);
    for (j, &pen) in penalized.iter().enumerate() {
        if pen {
            gram[(j, j)] += lambda2;
        }
    }
    let chol = nalgebra::linalg::Cholesky::new(gram).ok_or_else(|| {
        Error::Numeric(format!(
            "normal equations are singular: X ({n}x{p}) is rank deficient and the \
             L2 penalty (lambda2={lambda2}) does not cover the deficient columns"
        ))
    })?;
    Ok(chol.solve(&x.tr_mul(y)))
}

fn soft_threshold(z: f64, threshold: f64) -> f64 {
    // Relative slack absorbs rounding at the threshold boundary, so fitting
    // at exactly lambda_max snaps to zero instead of leaving ulp-sized
    // coefficients.
    let slack = threshold * 1e-12;
    if z > threshold + slack {
        z - threshold
    } else if z < -(threshold + slack) {
        z + threshold
    } else {
        0.0
    }
}

/// Weighted lasso by cyclic coordinate descent with soft thresholding.
///
/// Minimizes (1/(2n)) ||y - X b||^2 + lambda1 sum_j w_j |b_j|; weight 0
/// leaves a column unpenalized. Penalized columns are scaled to unit sample
/// standard deviation internally (with the weights rescaled so the problem
/// is unchanged) and coefficients are unscaled on return, so the returned
/// solution satisfies the KKT conditions of the stated objective.
pub fn fit_lasso_cd(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda1: f64,
    weights: &[f64],
) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    if n == 0 || y.len() != n {
        return Err(Error::Data(format!(
            "lasso needs matching rows: X has {n}, y has {}",
            y.len()
        )));
    }
    if weights.len() != p {
        return Err(Error::Config("l1 weights not aligned with columns".into()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Config("l1 weights must be finite and >= 0".into()));
    }
    if !(lambda1.is_finite() && lambda1 >= 0.0) {
        return Err(Error::Config("lambda1 must be finite and >= 0".into()));
    }
    let nf = n as f64;

    // Scale penalized columns to unit sample standard deviation. With
    // u_j = s_j b_j and w~_j = w_j / s_j the objective value is unchanged.
    let mut scale = vec![1.0f64; p];
    let mut xs = x.clone();
    for j in 0..p {
        if weights[j] > 0.0 {
            let col = x.column(j);
            let mean = col.sum() / nf;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
            let sd = var.sqrt();
            if sd > 0.0 && sd.is_finite() {
                scale[j] = sd;
                let mut c = xs.column_mut(j);
                c /= sd;
            } else {
                log::warn!("lasso column {j} is constant; left unscaled");
            }
        }
    }
    // Scale the response too (lambda and coefficients rescale along with
    // it), so the stopping tolerance is response-scale-free.
    let y_scale = {
        let mean = y.sum() / nf;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
        let sd = var.sqrt();
        if sd > 0.0 && sd.is_finite() {
            sd
        } else {
            1.0
        }
    };
    let lambda1 = lambda1 / y_scale;
    let w_eff: Vec<f64> = (0..p).map(|j| weights[j] / scale[j]).collect();
    let z: Vec<f64> = (0..p)
        .map(|j| xs.column(j).norm_squared() / nf)
        .collect();

    let mut u = DVector::<f64>::zeros(p);
    let mut resid = y / y_scale;
    let ys = resid.clone();
    let objective = |resid: &DVector<f64>, u: &DVector<f64>| -> f64 {
        resid.norm_squared() / (2.0 * nf)
            + lambda1
                * u.iter()
                    .zip(&w_eff)
                    .map(|(ui, wi)| wi * ui.abs())
                    .sum::<f64>()
    };
    let mut prev_obj = objective(&resid, &u);
    let mut prev_signs: Vec<i8> = vec![0; p];
    let mut stable_sweeps = 0usize;
    let mut last_polish_attempt = 0usize;

    for sweep in 1..=CD_MAX_SWEEPS {
        let mut max_delta = 0.0f64;
        for j in 0..p {
            if z[j] == 0.0 {
                continue;
            }
            let xj = xs.column(j);
            let rho = xj.dot(&resid) / nf + z[j] * u[j];
            let u_new = if w_eff[j] > 0.0 {
                soft_threshold(rho, lambda1 * w_eff[j]) / z[j]
            } else {
                rho / z[j]
            };
            let delta = u_new - u[j];
            if delta != 0.0 {
                resid.axpy(-delta, &xj, 1.0);
                u[j] = u_new;
            }
            max_delta = max_delta.max(delta.abs() / scale[j]);
        }
        let obj = objective(&resid, &u);
        debug_assert!(
            obj <= prev_obj + 1e-9 * (1.0 + prev_obj.abs()),
            "coordinate descent objective increased in sweep {sweep}: {prev_obj} -> {obj}"
        );
        prev_obj = obj;
        if max_delta < CD_TOL {
            return Ok(unscale(&u, &scale, y_scale));
        }

        // Near-collinear active sets slide for thousands of sweeps; once the
        // support and signs are stable, solve the sign-constrained
        // stationarity system directly and accept it if the full KKT
        // conditions hold.
        let signs: Vec<i8> = u.iter().map(|&v| sign8(v)).collect();
        if signs == prev_signs {
            stable_sweeps += 1;
        } else {
            stable_sweeps = 0;
            prev_signs = signs;
        }
        if stable_sweeps >= 2 && sweep >= last_polish_attempt + 8 {
            last_polish_attempt = sweep;
            if let Some(polished) = polish_active_set(&xs, &ys, &u, &z, &w_eff, lambda1, nf) {
                return Ok(unscale(&polished, &scale, y_scale));
            }
        }
    }
    let last = unscale(&u, &scale, y_scale);
    Err(Error::NonConvergence {
        iterations: CD_MAX_SWEEPS,
        gap: last_sweep_gap(&xs, &resid, &u, &z, &w_eff, lambda1, nf, &scale),
        last_iterate: last.iter().copied().collect(),
    })
}

fn sign8(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Exact finisher on a stabilized iterate: feature-sign-search style
/// active-set solve. Repeatedly solves the sign-fixed stationarity system
/// on the active set, removing coordinates at sign crossings via a line
/// search and admitting the worst inactive KKT violator, until the full
/// KKT conditions hold. Returns `None` if it fails to terminate cleanly;
/// coordinate descent then just continues.
fn polish_active_set(
    xs: &DMatrix<f64>,
    ys: &DVector<f64>,
    u: &DVector<f64>,
    z: &[f64],
    w_eff: &[f64],
    lambda1: f64,
    nf: f64,
) -> Option<DVector<f64>> {
    let p = u.len();
    let mut current = u.clone();
    let mut active: Vec<usize> = (0..p)
        .filter(|&j| z[j] > 0.0 && (u[j] != 0.0 || w_eff[j] == 0.0))
        .collect();
    // Sign each penalized active coordinate is constrained to.
    let mut theta: Vec<i8> = (0..p).map(|j| sign8(u[j])).collect();

    let solve_on = |active: &[usize], theta: &[i8]| -> Option<DVector<f64>> {
        if active.is_empty() {
            return Some(DVector::zeros(p));
        }
        let a = active.len();
        let mut xa = DMatrix::zeros(xs.nrows(), a);
        for (k, &j) in active.iter().enumerate() {
            xa.view_mut((0, k), (xs.nrows(), 1)).copy_from(&xs.column(j));
        }
        let mut rhs = xa.tr_mul(ys);
        for (k, &j) in active.iter().enumerate() {
            rhs[k] -= nf * lambda1 * w_eff[j] * theta[j] as f64;
        }
        let chol = nalgebra::linalg::Cholesky::new(xa.tr_mul(&xa))?;
        let v = chol.solve(&rhs);
        let mut out = DVector::<f64>::zeros(p);
        for (k, &j) in active.iter().enumerate() {
            out[j] = v[k];
        }
        Some(out)
    };

    let kkt_holds = |beta: &DVector<f64>| -> bool {
        let resid = ys - xs * beta;
        (0..p).all(|j| {
            if z[j] == 0.0 {
                return true;
            }
            let g = xs.column(j).dot(&resid) / nf;
            let tol = 1e-7 * (1.0 + lambda1 * w_eff[j]);
            if beta[j] != 0.0 || w_eff[j] == 0.0 {
                (g - lambda1 * w_eff[j] * sign8(beta[j]) as f64).abs() <= tol
            } else {
                g.abs() <= lambda1 * w_eff[j] + tol
            }
        })
    };

    for _ in 0..6 * p + 10 {
        let candidate = solve_on(&active, &theta)?;
        // Line search toward the candidate: stop at the first sign crossing
        // of a penalized coordinate and deactivate it.
        let mut alpha = 1.0f64;
        let mut crossing: Option<usize> = None;
        for &j in &active {
            if w_eff[j] == 0.0 {
                continue;
            }
            if sign8(candidate[j]) != theta[j] && current[j] != 0.0 {
                let step = candidate[j] - current[j];
                if step != 0.0 {
                    let a = -current[j] / step;
                    if a >= 0.0 && a < alpha {
                        alpha = a;
                        crossing = Some(j);
                    }
                }
            }
        }
        match crossing {
            Some(j_cross) => {
                current = &current * (1.0 - alpha) + &candidate * alpha;
                current[j_cross] = 0.0;
                active.retain(|&j| j != j_cross);
                theta[j_cross] = 0;
            }
            None => {
                current = candidate;
                for &j in &active {
                    if w_eff[j] > 0.0 {
                        theta[j] = sign8(current[j]);
                    }
                }
                // Admit the worst inactive violator, or finish.
                let resid = ys - xs * &current;
                let mut worst: Option<(usize, f64)> = None;
                for j in 0..p {
                    if z[j] == 0.0 || current[j] != 0.0 || w_eff[j] == 0.0 {
                        continue;
                    }
                    let g = xs.column(j).dot(&resid) / nf;
                    let excess = g.abs() - lambda1 * w_eff[j];
                    if excess > 1e-9 * (1.0 + lambda1 * w_eff[j])
                        && worst.map_or(true, |(_, we)| excess > we)
                    {
                        worst = Some((j, excess));
                    }
                }
                match worst {
                    Some((j_in, _)) => {
                        let g = xs.column(j_in).dot(&resid) / nf;
                        theta[j_in] = sign8(g);
                        active.push(j_in);
                    }
                    None => {
                        if kkt_holds(&current) {
                            return Some(current);
                        }
                        return None;
                    }
                }
            }
        }
    }
    None
}

fn unscale(u: &DVector<f64>, scale: &[f64], y_scale: f64) -> DVector<f64> {
    DVector::from_iterator(
        u.len(),
        u.iter().zip(scale).map(|(ui, s)| y_scale * ui / s),
    )
}

#[allow(clippy::too_many_arguments)]
fn last_sweep_gap(
    xs: &DMatrix<f64>,
    resid: &DVector<f64>,
    u: &DVector<f64>,
    z: &[f64],
    w_eff: &[f64],
    lambda1: f64,
    nf: f64,
    scale: &[f64],
) -> f64 {
    let mut gap = 0.0f64;
    for j in 0..u.len() {
        if z[j] == 0.0 {
            continue;
        }
        let rho = xs.column(j).dot(resid) / nf + z[j] * u[j];
        let u_new = if w_eff[j] > 0.0 {
            soft_threshold(rho, lambda1 * w_eff[j]) / z[j]
        } else {
            rho / z[j]
        };
        gap = gap.max((u_new - u[j]).abs() / scale[j]);
    }
    gap
}

/// Adaptive L1 weights: the reciprocal of an initial ridge estimate,
/// w_j = 1 / (|b_init_j|^gamma + epsilon) on penalized columns and 0 on
/// unpenalized ones. The initial estimate uses lambda2 = 1e-4 tr(X^T X) / p.
pub fn adaptive_weights(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    penalized: &[bool],
    gamma: f64,
    epsilon: f64,
) -> Result<Vec<f64>> {
    let p = x.ncols();
    if p == 0 {
        return Ok(Vec::new());
    }
    let trace: f64 = (0..p).map(|j| x.column(j).norm_squared()).sum();
    let lambda_init = 1e-4 * trace / p as f64;
    let beta = fit_ridge(x, y, lambda_init, penalized)?;
    Ok((0..p)
        .map(|j| {
            if penalized[j] {
                1.0 / (beta[j].abs().powf(gamma) + epsilon)
            } else {
                0.0
            }
        })
        .collect())
}

/// Default exponent for adaptive weights.
pub const ADAPTIVE_GAMMA: f64 = 1.0;
/// Default floor inside the adaptive-weight reciprocal.
pub const ADAPTIVE_EPSILON: f64 = 1e-8;

/// A partial-penalty regression problem:
/// min ||y - X0 b0 - X1 b1 - X2 b2||^2 + lambda1 sum w_j |b1_j| + lambda2 ||b2||^2.
#[derive(Debug, Clone)]
pub struct MixedProblem {
    /// Unpenalized block.
    pub x0: DMatrix<f64>,
    /// L1-penalized block.
    pub x1: DMatrix<f64>,
    /// L2-penalized block.
    pub x2: DMatrix<f64>,
    pub y: DVector<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Per-column weights on the L1 block (unit weights when empty).
    pub l1_weights: Vec<f64>,
}

impl MixedProblem {
    fn validate(&self) -> Result<()> {
        let n = self.y.len();
        for (name, m) in [("X0", &self.x0), ("X1", &self.x1), ("X2", &self.x2)] {
            if m.ncols() > 0 && m.nrows() != n {
                return Err(Error::Data(format!(
                    "{name} has {} rows, y has {n}",
                    m.nrows()
                )));
            }
        }
        if !self.l1_weights.is_empty() && self.l1_weights.len() != self.x1.ncols() {
            return Err(Error::Config(
                "l1 weights not aligned with the L1 block".into(),
            ));
        }
        Ok(())
    }

    fn weights(&self) -> Vec<f64> {
        if self.l1_weights.is_empty() {
            vec![1.0; self.x1.ncols()]
        } else {
            self.l1_weights.clone()
        }
    }

    /// Joint objective value at a candidate solution.
    pub fn objective(&self, b0: &DVector<f64>, b1: &DVector<f64>, b2: &DVector<f64>) -> f64 {
        let mut r = self.y.clone();
        if self.x0.ncols() > 0 {
            r -= &self.x0 * b0;
        }
        if self.x1.ncols() > 0 {
            r -= &self.x1 * b1;
        }
        if self.x2.ncols() > 0 {
            r -= &self.x2 * b2;
        }
        let w = self.weights();
        r.norm_squared()
            + self.lambda1
                * b1.iter()
                    .zip(&w)
                    .map(|(b, w)| w * b.abs())
                    .sum::<f64>()
            + self.lambda2 * b2.norm_squared()
    }
}

/// Solution of a [`MixedProblem`].
#[derive(Debug, Clone)]
pub struct MixedSolution {
    pub beta0: DVector<f64>,
    pub beta1: DVector<f64>,
    pub beta2: DVector<f64>,
}

/// Projection machinery for the two-step solver: residualization against
/// the joined unpenalized/L2 block under the ridge-regularized Gram matrix.
///
/// Profiling out (b0, b2) at fixed b1 leaves the quadratic form
/// v^T (I - H_lambda) v with v = y - X1 b1, which is an ordinary projection
/// residual only after augmenting the rows with sqrt(lambda2) D^(1/2): the
/// transformed design carries `n + p2` rows when lambda2 > 0. With
/// lambda2 = 0 the augmentation vanishes and this reduces to (I - H) X1.
pub struct MixedProjection {
    x02: DMatrix<f64>,
    chol: nalgebra::linalg::Cholesky<f64, Dyn>,
    n_unpenalized: usize,
    sqrt_lambda2: f64,
}

impl MixedProjection {
    /// Builds the projection for `[X0, X2]` with the diagonal penalty that
    /// is zero on the X0 columns. Returns `None` when both blocks are empty.
    pub fn new(x0: &DMatrix<f64>, x2: &DMatrix<f64>, lambda2: f64) -> Result<Option<Self>> {
        let (p0, p2) = (x0.ncols(), x2.ncols());
        if p0 + p2 == 0 {
            return Ok(None);
        }
        let n = if p0 > 0 { x0.nrows() } else { x2.nrows() };
        let mut x02 = DMatrix::zeros(n, p0 + p2);
        if p0 > 0 {
            x02.view_mut((0, 0), (n, p0)).copy_from(x0);
        }
        if p2 > 0 {
            x02.view_mut((0, p0), (n, p2)).copy_from(x2);
        }
        let mut gram = x02.tr_mul(&x02);
        for j in p0..p0 + p2 {
            gram[(j, j)] += lambda2;
        }
        let chol = nalgebra::linalg::Cholesky::new(gram).ok_or_else(|| {
            Error::Numeric(
                "regularized Gram matrix of the unpenalized/L2 block is singular".into(),
            )
        })?;
        let sqrt_lambda2 = if p2 > 0 { lambda2.sqrt() } else { 0.0 };
        Ok(Some(Self {
            x02,
            chol,
            n_unpenalized: p0,
            sqrt_lambda2,
        }))
    }

    fn augmented_rows(&self) -> usize {
        if self.sqrt_lambda2 > 0.0 {
            self.x02.ncols() - self.n_unpenalized
        } else {
            0
        }
    }

    /// Residualizes `m` (and zero-padded augmented rows) against the
    /// augmented column space: top block m - X02 A, bottom block
    /// -sqrt(lambda2) A_2 with A = G^-1 X02^T m.
    pub fn residualize_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let extra = self.augmented_rows();
        let a = self.chol.solve(&self.x02.tr_mul(m));
        let top = m - &self.x02 * &a;
        let mut out = DMatrix::zeros(n + extra, m.ncols());
        out.view_mut((0, 0), (n, m.ncols())).copy_from(&top);
        if extra > 0 {
            let a2 = a.rows(self.n_unpenalized, extra) * (-self.sqrt_lambda2);
            out.view_mut((n, 0), (extra, m.ncols())).copy_from(&a2);
        }
        out
    }

    pub fn residualize_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(
            self.residualize_matrix(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
                .as_slice(),
        )
    }

    /// Step-2 recovery: (X02^T X02 + lambda2 D)^-1 X02^T rhs, split into the
    /// unpenalized and L2 parts.
    pub fn recover(&self, rhs: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let b02 = self.chol.solve(&self.x02.tr_mul(rhs));
        let b0 = b02.rows(0, self.n_unpenalized).into_owned();
        let b2 = b02
            .rows(self.n_unpenalized, b02.len() - self.n_unpenalized)
            .into_owned();
        (b0, b2)
    }
}

/// Two-step solution of the mixed penalty problem: residualize y and the L1
/// block against the unpenalized/L2 block, solve the reduced lasso, then
/// recover the unpenalized/L2 coefficients in closed form.
pub fn fit_mixed_two_step(problem: &MixedProblem) -> Result<MixedSolution> {
    problem.validate()?;
    let weights = problem.weights();

    match MixedProjection::new(&problem.x0, &problem.x2, problem.lambda2)? {
        None => {
            // ||r||^2 + lambda1 L1 == 2n [ (1/(2n)) ||r||^2 + (lambda1/(2n)) L1 ].
            let lambda_cd = problem.lambda1 / (2.0 * problem.y.len() as f64);
            let beta1 = fit_lasso_cd(&problem.x1, &problem.y, lambda_cd, &weights)?;
            Ok(MixedSolution {
                beta0: DVector::zeros(0),
                beta1,
                beta2: DVector::zeros(0),
            })
        }
        Some(proj) => {
            let beta1 = if problem.x1.ncols() > 0 {
                let x1_t = proj.residualize_matrix(&problem.x1);
                let y_t = proj.residualize_vector(&problem.y);
                let lambda_cd = problem.lambda1 / (2.0 * y_t.len() as f64);
                fit_lasso_cd(&x1_t, &y_t, lambda_cd, &weights)?
            } else {
                DVector::zeros(0)
            };
            let mut rhs = problem.y.clone();
            if problem.x1.ncols() > 0 {
                rhs -= &problem.x1 * &beta1;
            }
            let (beta0, beta2) = proj.recover(&rhs);
            Ok(MixedSolution {
                beta0,
                beta1,
                beta2,
            })
        }
    }
}

/// Smallest lambda1 (in the (1/(2n)) convention of [`fit_lasso_cd`]) at
/// which every penalized coefficient is zero: max_j |x_j^T y| / (n w_j)
/// over columns with positive weight.
pub fn lambda_max(x: &DMatrix<f64>, y: &DVector<f64>, weights: &[f64]) -> Result<f64> {
    let (n, p) = x.shape();
    if weights.len() != p {
        return Err(Error::Config("weights not aligned with columns".into()));
    }
    let mut best: Option<f64> = None;
    for j in 0..p {
        if weights[j] > 0.0 {
            let v = x.column(j).dot(y).abs() / (n as f64 * weights[j]);
            best = Some(best.map_or(v, |b: f64| b.max(v)));
        }
    }
    best.ok_or_else(|| Error::Config("lambda_max needs at least one penalized column".into()))
}

/// Smoothing width factor for the pinball loss: 1e-4 * IQR(y).
const QUANTILE_SMOOTHING_IQR_FACTOR: f64 = 1e-4;
const QUANTILE_MAX_ITER: usize = 500;

/// Smoothed pinball value: the check function with a C^1 quadratic patch on
/// |r| < h.
fn smoothed_pinball(r: f64, tau: f64, h: f64) -> f64 {
    if r >= h {
        tau * r
    } else if r <= -h {
        (tau - 1.0) * r
    } else {
        r * r / (4.0 * h) + (tau - 0.5) * r + h / 4.0
    }
}

/// Quantile (pinball) regression via iteratively reweighted least squares
/// on a smoothed objective; the smoothing width is 1e-4 * IQR(y).
pub fn fit_quantile(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> Result<DVector<f64>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!(
            "quantile level must be in (0, 1), got {tau}"
        )));
    }
    let (n, p) = x.shape();
    if n == 0 || y.len() != n {
        return Err(Error::Data("quantile fit needs matching rows".into()));
    }
    let nf = n as f64;
    let ys: Vec<f64> = y.iter().copied().collect();
    let iqr = crate::volatility::sample_quantile(&ys, 0.75)?
        - crate::volatility::sample_quantile(&ys, 0.25)?;
    let mut h = QUANTILE_SMOOTHING_IQR_FACTOR * iqr;
    if !(h > 0.0) {
        h = 1e-8;
    }

    let objective = |beta: &DVector<f64>| -> f64 {
        let r = y - x * beta;
        r.iter().map(|&ri| smoothed_pinball(ri, tau, h)).sum::<f64>() / nf
    };

    let mut beta = fit_ridge(x, y, 0.0, &vec![false; p])?;
    let mut obj = objective(&beta);
    for _iter in 0..QUANTILE_MAX_ITER {
        let resid = y - x * &beta;
        // Asymmetric IRLS weights with the denominator floored at h.
        let mut xw = x.clone();
        let mut yw = DVector::<f64>::zeros(n);
        for i in 0..n {
            let c = if resid[i] >= 0.0 { tau } else { 1.0 - tau };
            let w = c / resid[i].abs().max(h);
            let ws = w.sqrt();
            let mut row = xw.row_mut(i);
            row *= ws;
            yw[i] = ws * y[i];
        }
        let gram = xw.tr_mul(&xw);
        let chol = nalgebra::linalg::Cholesky::new(gram).ok_or_else(|| {
            Error::Numeric("weighted normal equations are singular in quantile fit".into())
        })?;
        let candidate = chol.solve(&xw.tr_mul(&yw));

        // Damped step: back off until the smoothed objective decreases.
        let mut alpha = 1.0;
        let mut next = &beta + alpha * (&candidate - &beta);
        let mut next_obj = objective(&next);
        let mut halvings = 0;
        while next_obj > obj && halvings < 40 {
            alpha *= 0.5;
            next = &beta + alpha * (&candidate - &beta);
            next_obj = objective(&next);
            halvings += 1;
        }
        let change = (obj - next_obj).abs();
        beta = next;
        let converged = change < 1e-10 * (1.0 + obj.abs());
        obj = next_obj;
        if converged {
            return Ok(beta);
        }
    }
    Err(Error::NonConvergence {
        iterations: QUANTILE_MAX_ITER,
        gap: obj,
        last_iterate: beta.iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        DMatrix::from_fn(n, p, |_, _| normal.sample(rng))
    }

    /// Independent normal-equation solve by Gaussian elimination with
    /// partial pivoting; shares no code with the ridge path.
    fn gaussian_elimination_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Vec<f64> {
        let p = b.len();
        let mut m = vec![vec![0.0f64; p + 1]; p];
        for i in 0..p {
            for j in 0..p {
                m[i][j] = a[(i, j)];
            }
            m[i][p] = b[i];
        }
        for col in 0..p {
            let pivot = (col..p)
                .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
                .unwrap();
            m.swap(col, pivot);
            let d = m[col][col];
            assert!(d.abs() > 1e-12, "singular test system");
            for j in col..=p {
                m[col][j] /= d;
            }
            for i in 0..p {
                if i != col {
                    let f = m[i][col];
                    for j in col..=p {
                        m[i][j] -= f * m[col][j];
                    }
                }
            }
        }
        (0..p).map(|i| m[i][p]).collect()
    }

    fn ridge_oracle(x: &DMatrix<f64>, y: &DVector<f64>, lambda2: f64, penalized: &[bool]) -> Vec<f64> {
        let mut gram = x.tr_mul(x);
        for (j, &pen) in penalized.iter().enumerate() {
            if pen {
                gram[(j, j)] += lambda2;
            }
        }
        gaussian_elimination_solve(&gram, &x.tr_mul(y))
    }

    #[test]
    fn ridge_zero_lambda_is_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 20, 5);
        let y = random_matrix(&mut rng, 20, 1).column(0).into_owned();
        let beta = fit_ridge(&x, &y, 0.0, &[false; 5]).unwrap();
        let oracle = ridge_oracle(&x, &y, 0.0, &[false; 5]);
        for j in 0..5 {
            assert!((beta[j] - oracle[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn ridge_identity_design_shrinks() {
        let x = DMatrix::<f64>::identity(4, 4);
        let y = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        let beta = fit_ridge(&x, &y, 3.0, &[true; 4]).unwrap();
        for j in 0..4 {
            assert!((beta[j] - y[j] / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ridge_random_matches_normal_equation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(&mut rng, 20, 5);
        let y = random_matrix(&mut rng, 20, 1).column(0).into_owned();
        let mask = [true, false, true, true, false];
        let beta = fit_ridge(&x, &y, 0.7, &mask).unwrap();
        let oracle = ridge_oracle(&x, &y, 0.7, &mask);
        for j in 0..5 {
            assert!((beta[j] - oracle[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn ridge_singular_without_penalty_errors() {
        let mut x = DMatrix::<f64>::zeros(6, 3);
        for i in 0..6 {
            x[(i, 0)] = i as f64;
            x[(i, 1)] = 2.0 * i as f64; // collinear
            x[(i, 2)] = 1.0;
        }
        let y = DVector::from_element(6, 1.0);
        assert!(fit_ridge(&x, &y, 0.0, &[false; 3]).is_err());
        // A penalty covering the collinear columns repairs it.
        assert!(fit_ridge(&x, &y, 0.5, &[true, true, false]).is_ok());
    }

    #[test]
    fn ridge_scaling_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 30, 4);
        let y = random_matrix(&mut rng, 30, 1).column(0).into_owned();
        let beta = fit_ridge(&x, &y, 0.9, &[true; 4]).unwrap();
        let beta_scaled = fit_ridge(&x, &(&y * 3.5), 0.9, &[true; 4]).unwrap();
        for j in 0..4 {
            assert!((beta_scaled[j] - 3.5 * beta[j]).abs() < 1e-10);
        }
    }

    fn kkt_check(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, lambda: f64, w: &[f64], tol: f64) {
        let n = x.nrows() as f64;
        let r = y - x * beta;
        for j in 0..x.ncols() {
            let g = x.column(j).dot(&r) / n;
            if w[j] == 0.0 {
                assert!(g.abs() <= tol, "unpenalized gradient {g} at column {j}");
            } else if beta[j] == 0.0 {
                assert!(
                    g.abs() <= lambda * w[j] + tol,
                    "KKT violated at zero coord {j}: |{g}| > {}",
                    lambda * w[j]
                );
            } else {
                assert!(
                    (g - lambda * w[j] * beta[j].signum()).abs() <= tol,
                    "KKT violated at active coord {j}"
                );
            }
        }
    }

    #[test]
    fn lasso_kkt_on_random_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 50, 8);
        let y = random_matrix(&mut rng, 50, 1).column(0).into_owned();
        let w = vec![1.0; 8];
        let beta = fit_lasso_cd(&x, &y, 0.1, &w).unwrap();
        kkt_check(&x, &y, &beta, 0.1, &w, 1e-6);
    }

    #[test]
    fn lasso_at_lambda_max_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 40, 6);
        let y = random_matrix(&mut rng, 40, 1).column(0).into_owned();
        let w = vec![1.0; 6];
        let lmax = lambda_max(&x, &y, &w).unwrap();
        let beta = fit_lasso_cd(&x, &y, lmax, &w).unwrap();
        assert!(beta.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn lasso_zero_lambda_is_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_matrix(&mut rng, 30, 4);
        let y = random_matrix(&mut rng, 30, 1).column(0).into_owned();
        let beta = fit_lasso_cd(&x, &y, 0.0, &[1.0; 4]).unwrap();
        let ols = ridge_oracle(&x, &y, 0.0, &[false; 4]);
        for j in 0..4 {
            assert!((beta[j] - ols[j]).abs() < 1e-5, "{} vs {}", beta[j], ols[j]);
        }
    }

    #[test]
    fn lasso_weight_zero_leaves_column_unpenalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_matrix(&mut rng, 60, 3);
        let truth = DVector::from_vec(vec![2.0, 0.0, -1.0]);
        let y = &x * &truth;
        let beta = fit_lasso_cd(&x, &y, 0.5, &[0.0, 1.0, 1.0]).unwrap();
        kkt_check(&x, &y, &beta, 0.5, &[0.0, 1.0, 1.0], 1e-6);
        // Unpenalized column keeps a large coefficient.
        assert!(beta[0].abs() > 1.0);
    }

    #[test]
    fn adaptive_weights_identify_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_matrix(&mut rng, 120, 4);
        let noise = random_matrix(&mut rng, 120, 1).column(0).into_owned() * 0.1;
        let y = x.column(0) * 5.0 + noise;
        let w = adaptive_weights(&x, &y, &[true; 4], 1.0, 1e-8).unwrap();
        assert!(w[0] < w[1] && w[0] < w[2] && w[0] < w[3]);
    }

    #[test]
    fn adaptive_weights_formula_cases() {
        // gamma=1, beta_init=2, eps=0 -> w = 0.5: check by constructing a
        // design where ridge recovers beta exactly.
        let x = DMatrix::<f64>::identity(2, 2) * 1000.0;
        let y = DVector::from_vec(vec![2000.0, 0.0]);
        // trace = 2e6, lambda_init = 1e-4 * 2e6 / 2 = 100; beta0 ~ 2e6/(1e6+100) ~ 2.
        let w = adaptive_weights(&x, &y, &[true, true], 1.0, 0.0).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-3);
        // Near-zero estimate gets weight ~ 1/eps.
        let w = adaptive_weights(&x, &y, &[true, true], 1.0, 1e-8).unwrap();
        assert!(w[1] > 1e7);
        assert!(w[1].is_finite());
    }

    #[test]
    fn mixed_reduces_to_lasso_without_x0_x2() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x1 = random_matrix(&mut rng, 40, 5);
        let y = random_matrix(&mut rng, 40, 1).column(0).into_owned();
        let lambda_cd = 0.07;
        let problem = MixedProblem {
            x0: DMatrix::zeros(40, 0),
            x1: x1.clone(),
            x2: DMatrix::zeros(40, 0),
            y: y.clone(),
            lambda1: 2.0 * 40.0 * lambda_cd,
            lambda2: 0.0,
            l1_weights: vec![],
        };
        let sol = fit_mixed_two_step(&problem).unwrap();
        let direct = fit_lasso_cd(&x1, &y, lambda_cd, &[1.0; 5]).unwrap();
        for j in 0..5 {
            assert!((sol.beta1[j] - direct[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn mixed_huge_lambda1_reduces_to_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x0 = random_matrix(&mut rng, 30, 2);
        let x1 = random_matrix(&mut rng, 30, 3);
        let x2 = random_matrix(&mut rng, 30, 2);
        let y = random_matrix(&mut rng, 30, 1).column(0).into_owned();
        let x1t = {
            let proj = MixedProjection::new(&x0, &x2, 0.8).unwrap().unwrap();
            proj.residualize_matrix(&x1)
        };
        let yt = {
            let proj = MixedProjection::new(&x0, &x2, 0.8).unwrap().unwrap();
            proj.residualize_vector(&y)
        };
        let lmax = lambda_max(&x1t, &yt, &[1.0; 3]).unwrap();
        let problem = MixedProblem {
            x0: x0.clone(),
            x1,
            x2: x2.clone(),
            y: y.clone(),
            lambda1: 1e6 * 2.0 * 30.0 * lmax,
            lambda2: 0.8,
            l1_weights: vec![],
        };
        let sol = fit_mixed_two_step(&problem).unwrap();
        assert!(sol.beta1.iter().all(|b| *b == 0.0));
        // With b1 = 0, (b0, b2) matches ridge on [X0, X2] penalizing X2 only.
        let mut x02 = DMatrix::zeros(30, 4);
        x02.view_mut((0, 0), (30, 2)).copy_from(&x0);
        x02.view_mut((0, 2), (30, 2)).copy_from(&x2);
        let ridge = fit_ridge(&x02, &y, 0.8, &[false, false, true, true]).unwrap();
        for j in 0..2 {
            assert!((sol.beta0[j] - ridge[j]).abs() < 1e-8);
            assert!((sol.beta2[j] - ridge[j + 2]).abs() < 1e-8);
        }
    }

    /// Projected subgradient descent on the joint objective; independent of
    /// the two-step path.
    fn subgradient_oracle(problem: &MixedProblem, iters: usize) -> f64 {
        let n0 = problem.x0.ncols();
        let n1 = problem.x1.ncols();
        let n2 = problem.x2.ncols();
        let w = problem.weights();
        let mut b0 = DVector::<f64>::zeros(n0);
        let mut b1 = DVector::<f64>::zeros(n1);
        let mut b2 = DVector::<f64>::zeros(n2);
        let mut best = problem.objective(&b0, &b1, &b2);
        // Step scale from the data.
        let scale = 1.0 / (problem.y.norm_squared().max(1.0));
        for k in 1..=iters {
            let mut r = problem.y.clone();
            if n0 > 0 {
                r -= &problem.x0 * &b0;
            }
            if n1 > 0 {
                r -= &problem.x1 * &b1;
            }
            if n2 > 0 {
                r -= &problem.x2 * &b2;
            }
            let step = scale * 2.0 / (k as f64).sqrt();
            if n0 > 0 {
                let g0 = problem.x0.tr_mul(&r) * -2.0;
                b0 -= step * g0;
            }
            if n1 > 0 {
                let mut g1 = problem.x1.tr_mul(&r) * -2.0;
                for j in 0..n1 {
                    g1[j] += problem.lambda1
                        * w[j]
                        * if b1[j] > 0.0 {
                            1.0
                        } else if b1[j] < 0.0 {
                            -1.0
                        } else {
                            // subgradient choice minimizing |g|
                            let raw = g1[j];
                            (-raw).clamp(-problem.lambda1 * w[j], problem.lambda1 * w[j])
                                / problem.lambda1.max(1e-300)
                                / w[j].max(1e-300)
                        };
                }
                b1 -= step * g1;
            }
            if n2 > 0 {
                let g2 = problem.x2.tr_mul(&r) * -2.0 + 2.0 * problem.lambda2 * &b2;
                b2 -= step * g2;
            }
            let obj = problem.objective(&b0, &b1, &b2);
            if obj < best {
                best = obj;
            }
        }
        best
    }

    #[test]
    fn mixed_two_step_matches_subgradient_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = random_matrix(&mut rng, 30, 2);
        let x1 = random_matrix(&mut rng, 30, 3);
        let x2 = random_matrix(&mut rng, 30, 2);
        let y = random_matrix(&mut rng, 30, 1).column(0).into_owned();
        let problem = MixedProblem {
            x0,
            x1,
            x2,
            y,
            lambda1: 3.0,
            lambda2: 0.5,
            l1_weights: vec![1.0, 2.0, 0.5],
        };
        let sol = fit_mixed_two_step(&problem).unwrap();
        let ours = problem.objective(&sol.beta0, &sol.beta1, &sol.beta2);
        let oracle = subgradient_oracle(&problem, 60_000);
        let rel = (ours - oracle).abs() / oracle.abs().max(1.0);
        assert!(rel < 1e-5, "objective gap {rel} (ours {ours}, oracle {oracle})");
        // The two-step solution can only be better or equal.
        assert!(ours <= oracle + 1e-7 * oracle.abs());
    }

    #[test]
    fn fit_penalized_dispatch_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = random_matrix(&mut rng, 40, 6);
        let y = random_matrix(&mut rng, 40, 1).column(0).into_owned();
        // Pure L2 equals fit_ridge.
        let spec = PenaltySpec {
            l1_weight: 0.0,
            l2_weight: 1.3,
            per_column_l1_weights: None,
            penalty_mask: vec![
                Penalty::Unpenalized,
                Penalty::L2,
                Penalty::L2,
                Penalty::L2,
                Penalty::L2,
                Penalty::L2,
            ],
        };
        let a = fit_penalized(&x, &y, &spec).unwrap();
        let b = fit_ridge(&x, &y, 1.3, &[false, true, true, true, true, true]).unwrap();
        for j in 0..6 {
            assert!((a[j] - b[j]).abs() < 1e-12);
        }
        // Mixed dispatch minimizes the same joint objective as the direct
        // mixed solver on the reordered blocks.
        let spec = PenaltySpec {
            l1_weight: 4.0,
            l2_weight: 0.9,
            per_column_l1_weights: None,
            penalty_mask: vec![
                Penalty::L1,
                Penalty::Unpenalized,
                Penalty::L2,
                Penalty::L1,
                Penalty::L2,
                Penalty::Unpenalized,
            ],
        };
        let beta = fit_penalized(&x, &y, &spec).unwrap();
        // KKT for the L1 coords of the joint problem at the solution: the
        // gradient of the smooth part must lie within the L1 subgradient.
        let r = &y - &x * &beta;
        for j in [0usize, 3] {
            let g = 2.0 * x.column(j).dot(&r);
            if beta[j] == 0.0 {
                assert!(g.abs() <= 4.0 + 1e-4, "KKT violated at zero L1 coord {j}: {g}");
            } else {
                assert!(
                    (g - 4.0 * beta[j].signum()).abs() <= 1e-4,
                    "KKT violated at active L1 coord {j}"
                );
            }
        }
        // Unpenalized coordinates have vanishing gradient; L2 coordinates
        // satisfy the ridge stationarity.
        for j in [1usize, 5] {
            assert!(x.column(j).dot(&r).abs() < 1e-6);
        }
        for j in [2usize, 4] {
            assert!((2.0 * x.column(j).dot(&r) - 2.0 * 0.9 * beta[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn lambda_max_examples() {
        // Single column with x^T y = 3 and n = 3 gives 1.
        let x = DMatrix::from_vec(3, 1, vec![1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        assert!((lambda_max(&x, &y, &[1.0]).unwrap() - 1.0).abs() < 1e-12);
        // Orthogonal target gives 0.
        let y = DVector::from_vec(vec![1.0, -2.0, 1.0]);
        assert!(lambda_max(&x, &y, &[1.0]).unwrap().abs() < 1e-12);
        // No penalized columns is an error.
        assert!(lambda_max(&x, &y, &[0.0]).is_err());
    }

    #[test]
    fn quantile_median_intercept_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let normal = Normal::new(3.0, 2.0).unwrap();
        let n = 201;
        let mut ys: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let x = DMatrix::from_element(n, 1, 1.0);
        let y = DVector::from_vec(ys.clone());
        let beta = fit_quantile(&x, &y, 0.5).unwrap();
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = ys[n / 2];
        let iqr = crate::volatility::sample_quantile(&ys, 0.75).unwrap()
            - crate::volatility::sample_quantile(&ys, 0.25).unwrap();
        let width = 1e-4 * iqr;
        assert!(
            (beta[0] - median).abs() <= width + 1e-6,
            "median {median} vs fit {}",
            beta[0]
        );
    }

    #[test]
    fn quantile_ninety_percent_intercept_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = 500;
        let ys: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let x = DMatrix::from_element(n, 1, 1.0);
        let y = DVector::from_vec(ys.clone());
        let beta = fit_quantile(&x, &y, 0.9).unwrap();
        let q90 = crate::volatility::sample_quantile(&ys, 0.9).unwrap();
        // Allow a few times the order-statistic spacing near the quantile.
        assert!(
            (beta[0] - q90).abs() < 0.06,
            "sample q90 {q90} vs fit {}",
            beta[0]
        );
    }

    #[test]
    fn quantile_median_close_to_ols_under_symmetric_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = {
            let mut m = random_matrix(&mut rng, 400, 3);
            for i in 0..400 {
                m[(i, 0)] = 1.0;
            }
            m
        };
        let truth = DVector::from_vec(vec![1.0, 2.0, -1.5]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let noise = DVector::from_iterator(400, (0..400).map(|_| normal.sample(&mut rng)));
        let y = &x * &truth + noise;
        let med = fit_quantile(&x, &y, 0.5).unwrap();
        let ols = fit_ridge(&x, &y, 0.0, &[false; 3]).unwrap();
        // Roughly 3 standard errors: se ~ sigma/sqrt(n) ~ 0.05 per coef.
        for j in 0..3 {
            assert!(
                (med[j] - ols[j]).abs() < 0.2,
                "coef {j}: median {} vs ols {}",
                med[j],
                ols[j]
            );
        }
    }
}
