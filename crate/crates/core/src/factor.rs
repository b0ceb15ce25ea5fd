//! Principal-component factors with EM for missing entries, and the
//! factor-augmented forecast regression.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{principal_components, Pca};
use crate::selection::{argmin_first, information_criterion, Criterion};

pub const EM_TOLERANCE: f64 = 1e-6;
pub const EM_MAX_ITER: usize = 200;
/// Columns with a smaller observed share are rejected.
pub const MIN_OBSERVED_SHARE: f64 = 0.3;
/// Factors extracted before `d` is chosen.
pub const DEFAULT_EXTRACTED: usize = 8;
/// Minimum usable rows in a forecast regression.
pub const MIN_FORECAST_ROWS: usize = 30;

#[derive(Debug, Clone)]
pub struct FactorFit {
    /// n × s, orthonormal columns.
    pub loadings: DMatrix<f64>,
    /// T × s.
    pub factors: DMatrix<f64>,
    pub s: usize,
    pub em_iterations: usize,
    pub em_converged: bool,
    /// Observed-entry reconstruction error after each EM iteration.
    pub em_objective: Vec<f64>,
    /// Data with missing entries replaced by the final common component.
    pub completed: DMatrix<f64>,
}

impl FactorFit {
    /// Factor scores for new rows of the same standardized panel.
    pub fn project(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        z * &self.loadings
    }
}

/// Standardizes each column on its observed (non-NaN) entries.
pub fn standardize_observed(z: &DMatrix<f64>, labels: &[String]) -> Result<(DMatrix<f64>, Vec<f64>, Vec<f64>)> {
    let t = z.nrows();
    let mut out = z.clone();
    let mut means = Vec::with_capacity(z.ncols());
    let mut sds = Vec::with_capacity(z.ncols());
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let obs: Vec<f64> = col.iter().copied().filter(|v| v.is_finite()).collect();
        let name = labels.get(j).cloned().unwrap_or_else(|| format!("column {j}"));
        if (obs.len() as f64) < MIN_OBSERVED_SHARE * t as f64 || obs.len() < 2 {
            return Err(Error::TooSparseColumn(name));
        }
        let m = obs.iter().sum::<f64>() / obs.len() as f64;
        let var = obs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (obs.len() as f64 - 1.0);
        if !(var > 0.0) {
            return Err(Error::InvalidInput(format!("{name} has zero variance")));
        }
        let sd = var.sqrt();
        for v in col.iter_mut() {
            if v.is_finite() {
                *v = (*v - m) / sd;
            }
        }
        means.push(m);
        sds.push(sd);
    }
    Ok((out, means, sds))
}

fn observed_error(z: &DMatrix<f64>, common: &DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    for j in 0..z.ncols() {
        for i in 0..z.nrows() {
            if z[(i, j)].is_finite() {
                total += (z[(i, j)] - common[(i, j)]).powi(2);
            }
        }
    }
    total
}

/// First `s` principal-component factors of `z`; NaN entries are missing.
///
/// Complete data is a single PCA. Otherwise missing entries start at the
/// column mean of the observed values and are replaced by the current common
/// component until the largest change falls below `EM_TOLERANCE`.
pub fn extract_factors(z: &DMatrix<f64>, s: usize, labels: &[String]) -> Result<FactorFit> {
    let (t, n) = z.shape();
    let missing: Vec<(usize, usize)> =
        (0..n).flat_map(|j| (0..t).map(move |i| (i, j))).filter(|&(i, j)| !z[(i, j)].is_finite()).collect();
    let s = s.min(t.min(n));
    if missing.is_empty() {
        let pca = principal_components(z, s)?;
        return Ok(from_pca(pca, s, 0, true, Vec::new(), z.clone()));
    }
    let mut filled = z.clone();
    for j in 0..n {
        let obs: Vec<f64> = (0..t).map(|i| z[(i, j)]).filter(|v| v.is_finite()).collect();
        if (obs.len() as f64) < MIN_OBSERVED_SHARE * t as f64 || obs.is_empty() {
            let name = labels.get(j).cloned().unwrap_or_else(|| format!("column {j}"));
            return Err(Error::TooSparseColumn(name));
        }
        let m = obs.iter().sum::<f64>() / obs.len() as f64;
        for i in 0..t {
            if !z[(i, j)].is_finite() {
                filled[(i, j)] = m;
            }
        }
    }
    let mut objective = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut pca = principal_components(&filled, s)?;
    while iterations < EM_MAX_ITER {
        let common = pca.common_component(s);
        objective.push(observed_error(z, &common));
        let mut change: f64 = 0.0;
        for &(i, j) in &missing {
            change = change.max((filled[(i, j)] - common[(i, j)]).abs());
            filled[(i, j)] = common[(i, j)];
        }
        iterations += 1;
        pca = principal_components(&filled, s)?;
        if change < EM_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("EM factor extraction stopped after {iterations} iterations without converging");
    }
    Ok(from_pca(pca, s, iterations, converged, objective, filled))
}

fn from_pca(pca: Pca, s: usize, em_iterations: usize, em_converged: bool, em_objective: Vec<f64>, completed: DMatrix<f64>) -> FactorFit {
    FactorFit { loadings: pca.loadings, factors: pca.scores, s, em_iterations, em_converged, em_objective, completed }
}

/// Orders of the factor-augmented regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FaSpec {
    /// Factors used.
    pub d: usize,
    /// Autoregressive order of y.
    pub q: usize,
    /// Factor lag order (lags 0..m-1).
    pub m: usize,
}

impl FaSpec {
    pub fn n_params(&self) -> usize {
        1 + self.q + self.d * self.m
    }

    /// Earliest origin index whose lags are all available.
    pub fn first_origin(&self) -> usize {
        let fl = if self.d > 0 { self.m } else { 0 };
        self.q.max(fl).saturating_sub(1)
    }

    /// Full grid with `d = 0` collapsed to `m = 1`.
    pub fn grid(d_max: usize, q_values: &[usize], m_max: usize) -> Vec<FaSpec> {
        let mut out = Vec::new();
        for d in 0..=d_max {
            for &q in q_values {
                for m in 1..=m_max {
                    if d == 0 && m > 1 {
                        continue;
                    }
                    out.push(FaSpec { d, q, m });
                }
            }
        }
        out.sort_by_key(|s| (s.n_params(), *s));
        out
    }
}

/// Regressors for origin `t`: `1, y_t..y_{t-q+1}, f_t..f_{t-m+1}` (first d factors).
pub fn fa_row(spec: FaSpec, y: &[f64], factors: &DMatrix<f64>, t: usize) -> Option<Vec<f64>> {
    if t < spec.first_origin() || t >= y.len() || t >= factors.nrows() || spec.d > factors.ncols() {
        return None;
    }
    let mut row = Vec::with_capacity(spec.n_params());
    row.push(1.0);
    for l in 0..spec.q {
        row.push(y[t - l]);
    }
    if spec.d > 0 {
        for l in 0..spec.m {
            for c in 0..spec.d {
                row.push(factors[(t - l, c)]);
            }
        }
    }
    row.iter().all(|v| v.is_finite()).then_some(row)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorForecastModel {
    pub spec: FaSpec,
    /// Intercept, AR coefficients, then factor coefficients lag-major.
    pub coefficients: Vec<f64>,
    pub sse: f64,
    pub n_obs: usize,
    pub residuals: Vec<f64>,
}

impl FactorForecastModel {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn ar(&self) -> &[f64] {
        &self.coefficients[1..1 + self.spec.q]
    }

    /// Coefficients on factor lag `l`.
    pub fn gamma(&self, l: usize) -> &[f64] {
        let start = 1 + self.spec.q + l * self.spec.d;
        &self.coefficients[start..start + self.spec.d]
    }

    pub fn predict(&self, y: &[f64], factors: &DMatrix<f64>, t: usize) -> Option<f64> {
        let row = fa_row(self.spec, y, factors, t)?;
        Some(row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum())
    }
}

/// OLS of `target[t]` on the regressors of origin `t` for every `t` in `origins`
/// with complete data. `target[t]` holds `y^h_{t+h}`.
pub fn fit_factor_forecast(
    spec: FaSpec,
    y: &[f64],
    target: &[f64],
    factors: &DMatrix<f64>,
    origins: &[usize],
) -> Result<FactorForecastModel> {
    let mut rows = Vec::new();
    let mut resp = Vec::new();
    for &t in origins {
        if t >= target.len() || !target[t].is_finite() {
            continue;
        }
        if let Some(r) = fa_row(spec, y, factors, t) {
            rows.push(r);
            resp.push(target[t]);
        }
    }
    let np = spec.n_params();
    let needed = MIN_FORECAST_ROWS.max(np + 1);
    if rows.len() < needed {
        return Err(Error::InsufficientHistory { needed, available: rows.len() });
    }
    let x = DMatrix::from_fn(rows.len(), np, |i, j| rows[i][j]);
    let yv = DVector::from_vec(resp);
    let svd = x.clone().svd(true, true);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if !(smin > 1e-8 * smax) {
        return Err(Error::RankDeficient { support: (0..np).collect() });
    }
    let beta = svd
        .solve(&yv, 1e-10 * smax)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let resid = &yv - &x * &beta;
    Ok(FactorForecastModel {
        spec,
        coefficients: beta.iter().copied().collect(),
        sse: resid.norm_squared(),
        n_obs: rows.len(),
        residuals: resid.iter().copied().collect(),
    })
}

#[derive(Debug, Clone)]
pub struct FaSelection {
    pub model: FactorForecastModel,
    pub scores: Vec<(FaSpec, f64)>,
}

/// Chooses the spec minimizing BIC or AIC over `origins`.
pub fn select_fa_criterion(
    grid: &[FaSpec],
    criterion: Criterion,
    y: &[f64],
    target: &[f64],
    factors: &DMatrix<f64>,
    origins: &[usize],
) -> Result<FaSelection> {
    // Score every spec on the rows usable by the largest lag order so criteria compare like with like.
    let max_first = grid.iter().map(|s| s.first_origin()).max().unwrap_or(0);
    let common: Vec<usize> = origins.iter().copied().filter(|&t| t >= max_first).collect();
    let mut scores = Vec::with_capacity(grid.len());
    for &spec in grid {
        let score = match fit_factor_forecast(spec, y, target, factors, &common) {
            Ok(m) => information_criterion(criterion, m.sse, m.n_obs, spec.n_params()),
            Err(_) => f64::INFINITY,
        };
        scores.push((spec, score));
    }
    let vals: Vec<f64> = scores.iter().map(|s| s.1).collect();
    let best = argmin_first(&vals).ok_or_else(|| Error::InsufficientHistory { needed: MIN_FORECAST_ROWS, available: common.len() })?;
    let model = fit_factor_forecast(grid[best], y, target, factors, origins)?;
    Ok(FaSelection { model, scores })
}

/// Fits every spec on `fit_origins`, scores squared errors on `val_origins`,
/// refits the winner on `fit_origins ∪ val_origins`.
pub fn select_fa_fcv(
    grid: &[FaSpec],
    y: &[f64],
    target: &[f64],
    factors: &DMatrix<f64>,
    fit_origins: &[usize],
    val_origins: &[usize],
) -> Result<FaSelection> {
    let mut scores = Vec::with_capacity(grid.len());
    for &spec in grid {
        let score = match fit_factor_forecast(spec, y, target, factors, fit_origins) {
            Ok(m) => {
                let mut sse = 0.0;
                let mut n = 0;
                for &t in val_origins {
                    if let Some(p) = m.predict(y, factors, t) {
                        if target[t].is_finite() {
                            sse += (target[t] - p).powi(2);
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    sse / n as f64
                } else {
                    f64::INFINITY
                }
            }
            Err(_) => f64::INFINITY,
        };
        scores.push((spec, score));
    }
    let vals: Vec<f64> = scores.iter().map(|s| s.1).collect();
    let best = argmin_first(&vals).ok_or_else(|| Error::InsufficientHistory { needed: MIN_FORECAST_ROWS, available: fit_origins.len() })?;
    let all: Vec<usize> = fit_origins.iter().chain(val_origins).copied().collect();
    let model = fit_factor_forecast(grid[best], y, target, factors, &all)?;
    Ok(FaSelection { model, scores })
}
