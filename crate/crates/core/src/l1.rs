//! Ridge, weighted LASSO by pathwise coordinate descent, and the adaptive LASSO.
//!
//! The LASSO objective is `||y - X b||^2 + lambda * sum_j w_j |b_j|` on the
//! centered problem, so the stationarity conditions read
//! `|2 x_j' r| <= lambda w_j` for zero coefficients and
//! `2 x_j' r = lambda w_j sign(b_j)` otherwise.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{SolverKind, SubsetModel};
use crate::problem::RegressionProblem;

pub const DEFAULT_GRID_SIZE: usize = 100;
pub const DEFAULT_GRID_RATIO: f64 = 1e-3;
pub const MAX_SWEEPS: usize = 10_000;
/// Convergence target on the largest stationarity violation, relative to
/// `max(1, lambda_0)` where `lambda_0` is the first grid point.
pub const KKT_TOLERANCE: f64 = 1e-7;
pub const WEIGHT_CAP: f64 = 1e6;
pub const RIDGE_FOLDS: usize = 5;
pub const RIDGE_GRID_SIZE: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct LassoConfig {
    pub grid_size: usize,
    pub grid_ratio: f64,
    pub max_sweeps: usize,
    pub tolerance: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            grid_size: DEFAULT_GRID_SIZE,
            grid_ratio: DEFAULT_GRID_RATIO,
            max_sweeps: MAX_SWEEPS,
            tolerance: KKT_TOLERANCE,
        }
    }
}

/// Solution at one grid point. Coefficients are on the problem's column scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub lambda: f64,
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub sse: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub kkt_violation: f64,
}

impl LassoFit {
    pub fn active(&self) -> Vec<usize> {
        self.beta.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, _)| j).collect()
    }

    pub fn to_model(&self, problem: &RegressionProblem, solver: SolverKind) -> SubsetModel {
        SubsetModel::from_coefficients(problem, self.beta.iter().copied().enumerate(), solver)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Path {
    pub lambdas: Vec<f64>,
    pub weights: Vec<f64>,
    pub fits: Vec<LassoFit>,
    /// Set when the path stopped early because the active set reached `T - 1`.
    pub truncated: bool,
}

impl L1Path {
    /// Grid points whose coordinate descent hit the sweep limit.
    pub fn failures(&self) -> Vec<Error> {
        self.fits
            .iter()
            .filter(|f| !f.converged)
            .map(|f| Error::NonConvergence { lambda: f.lambda })
            .collect()
    }
}

/// Smallest penalty with an all-zero solution: `max_j |2 x_j'y| / w_j`.
pub fn lambda_max(problem: &RegressionProblem, weights: &[f64]) -> f64 {
    problem.xty().iter().zip(weights).map(|(c, w)| (2.0 * c).abs() / w).fold(0.0, f64::max)
}

/// `n` log-spaced values from `top` down to `ratio * top`.
pub fn log_grid(top: f64, ratio: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![top];
    }
    let step = ratio.ln() / (n - 1) as f64;
    (0..n).map(|i| top * (step * i as f64).exp()).collect()
}

pub fn default_grid(problem: &RegressionProblem, weights: &[f64], config: &LassoConfig) -> Vec<f64> {
    let top = lambda_max(problem, weights);
    if top > 0.0 {
        log_grid(top, config.grid_ratio, config.grid_size)
    } else {
        vec![1.0]
    }
}

/// Largest stationarity violation of `beta` at `lambda`.
pub fn kkt_violation(problem: &RegressionProblem, weights: &[f64], lambda: f64, beta: &[f64]) -> f64 {
    let fitted = problem.x_times_sparse(beta.iter().copied().enumerate());
    let r = problem.y() - fitted;
    let g = problem.x().tr_mul(&r) * 2.0;
    beta.iter()
        .enumerate()
        .map(|(j, &b)| {
            let bound = lambda * weights[j];
            if b == 0.0 {
                (g[j].abs() - bound).max(0.0)
            } else {
                (g[j] - bound * b.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

struct Descent<'a> {
    problem: &'a RegressionProblem,
    weights: &'a [f64],
    beta: Vec<f64>,
    resid: DVector<f64>,
}

impl Descent<'_> {
    /// One pass over `coords`; returns the largest violation seen before each update.
    fn sweep(&mut self, lambda: f64, coords: impl Iterator<Item = usize>) -> f64 {
        let x = self.problem.x();
        let col_sq = self.problem.col_sq();
        let mut worst: f64 = 0.0;
        for j in coords {
            if col_sq[j] <= 0.0 {
                continue;
            }
            let col = x.column(j);
            let xr = col.dot(&self.resid);
            let old = self.beta[j];
            let bound = lambda * self.weights[j];
            let g = 2.0 * xr;
            let v = if old == 0.0 { (g.abs() - bound).max(0.0) } else { (g - bound * old.signum()).abs() };
            worst = worst.max(v);
            let z = xr + col_sq[j] * old;
            let half = 0.5 * bound;
            let new = if z > half {
                (z - half) / col_sq[j]
            } else if z < -half {
                (z + half) / col_sq[j]
            } else {
                0.0
            };
            if new != old {
                self.resid.axpy(old - new, &col, 1.0);
                self.beta[j] = new;
            }
        }
        worst
    }

    fn solve(&mut self, lambda: f64, tol: f64, max_sweeps: usize) -> (usize, bool) {
        let p = self.beta.len();
        let mut sweeps = 0;
        loop {
            let v = self.sweep(lambda, 0..p);
            sweeps += 1;
            if v <= tol {
                return (sweeps, true);
            }
            loop {
                if sweeps >= max_sweeps {
                    return (sweeps, false);
                }
                let active: Vec<usize> = (0..p).filter(|&j| self.beta[j] != 0.0).collect();
                let v = self.sweep(lambda, active.into_iter());
                sweeps += 1;
                if v <= tol {
                    break;
                }
            }
            if sweeps >= max_sweeps {
                return (sweeps, false);
            }
        }
    }
}

/// Weighted LASSO along a descending grid with warm starts.
pub fn lasso_path(
    problem: &RegressionProblem,
    grid: &[f64],
    weights: &[f64],
    config: &LassoConfig,
) -> Result<L1Path> {
    let p = problem.n_features();
    if weights.len() != p {
        return Err(Error::InvalidInput(format!("{} weights for {p} columns", weights.len())));
    }
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidInput("penalty weights must be positive and finite".into()));
    }
    if grid.is_empty() || grid.iter().any(|l| !(*l > 0.0)) || grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("lambda grid must be positive and strictly descending".into()));
    }
    let t = problem.n_obs();
    let mut d = Descent { problem, weights, beta: vec![0.0; p], resid: problem.y().clone() };
    let mut fits = Vec::with_capacity(grid.len());
    let mut truncated = false;
    let tol = config.tolerance * grid[0].max(1.0);
    for &lambda in grid {
        let (sweeps, converged) = d.solve(lambda, tol, config.max_sweeps);
        if !converged {
            log::warn!("coordinate descent did not converge at lambda = {lambda:e}");
        }
        let sse = d.resid.norm_squared();
        let xm = problem.x_mean();
        let intercept = problem.y_mean() - d.beta.iter().zip(xm).map(|(b, m)| b * m).sum::<f64>();
        let kkt = kkt_violation(problem, weights, lambda, &d.beta);
        let active = d.beta.iter().filter(|b| **b != 0.0).count();
        fits.push(LassoFit { lambda, beta: d.beta.clone(), intercept, sse, sweeps, converged, kkt_violation: kkt });
        if active + 1 >= t {
            truncated = fits.len() < grid.len();
            break;
        }
    }
    let lambdas = fits.iter().map(|f| f.lambda).collect();
    Ok(L1Path { lambdas, weights: weights.to_vec(), fits, truncated })
}

/// Ridge solutions for many penalties from one eigendecomposition.
pub struct RidgeSolver {
    /// Primal form uses `X'X`; dual form uses `XX'` when `p > T`.
    dual: bool,
    vectors: DMatrix<f64>,
    values: DVector<f64>,
    /// `V' X'y` (primal) or `U' y` (dual).
    projected: DVector<f64>,
    x: DMatrix<f64>,
}

impl RidgeSolver {
    pub fn new(problem: &RegressionProblem) -> Self {
        let x = problem.x().clone();
        let dual = x.ncols() > x.nrows();
        let (gram, rhs) = if dual {
            (&x * x.transpose(), problem.y().clone())
        } else {
            (x.tr_mul(&x), DVector::from_column_slice(problem.xty()))
        };
        let eig = SymmetricEigen::new(gram);
        let projected = eig.eigenvectors.tr_mul(&rhs);
        let values = eig.eigenvalues.map(|v| v.max(0.0));
        Self { dual, vectors: eig.eigenvectors, values, projected, x }
    }

    pub fn largest_eigenvalue(&self) -> f64 {
        self.values.max()
    }

    /// Minimizer of `||y - X b||^2 + alpha ||b||^2`.
    pub fn solve(&self, alpha: f64) -> DVector<f64> {
        let scaled = DVector::from_fn(self.values.len(), |i, _| self.projected[i] / (self.values[i] + alpha));
        let inner = &self.vectors * scaled;
        if self.dual {
            self.x.tr_mul(&inner)
        } else {
            inner
        }
    }
}

/// Contiguous fold blocks over `0..n`.
pub fn contiguous_folds(n: usize, folds: usize) -> Vec<Vec<usize>> {
    let folds = folds.clamp(1, n.max(1));
    (0..folds).map(|f| (f * n / folds..(f + 1) * n / folds).collect()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeCv {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub alphas: Vec<f64>,
    pub cv_error: Vec<f64>,
}

/// Ridge with the penalty chosen by contiguous k-fold CV on a log grid
/// spanning `[1e-5, 10]` times the largest Gram eigenvalue.
pub fn ridge_cv(problem: &RegressionProblem, folds: usize, grid_size: usize) -> Result<RidgeCv> {
    let t = problem.n_obs();
    if t < 2 * folds {
        return Err(Error::InsufficientHistory { needed: 2 * folds, available: t });
    }
    let full = RidgeSolver::new(problem);
    let top = full.largest_eigenvalue().max(f64::MIN_POSITIVE) * 10.0;
    let alphas = log_grid(top, 1e-6, grid_size);
    let mut cv_error = vec![0.0; alphas.len()];
    for held in contiguous_folds(t, folds) {
        let train_rows: Vec<usize> = (0..t).filter(|i| held.binary_search(i).is_err()).collect();
        let train = problem.subset_rows(&train_rows)?;
        let solver = RidgeSolver::new(&train);
        for (a, &alpha) in alphas.iter().enumerate() {
            let beta = solver.solve(alpha);
            let xm = train.x_mean();
            for &i in &held {
                let pred = train.y_mean()
                    + (0..beta.len()).map(|j| beta[j] * (problem.raw_x(i, j) - xm[j])).sum::<f64>();
                cv_error[a] += (problem.raw_y(i) - pred).powi(2);
            }
        }
    }
    // Ties go to the larger penalty, which comes first.
    let best = cv_error
        .iter()
        .enumerate()
        .fold(0, |b, (i, e)| if *e < cv_error[b] { i } else { b });
    let alpha = alphas[best];
    let beta = full.solve(alpha).iter().copied().collect();
    for e in &mut cv_error {
        *e /= t as f64;
    }
    Ok(RidgeCv { alpha, beta, alphas, cv_error })
}

/// `min(1 / |b_j|, cap)` for each first-stage coefficient.
pub fn adaptive_weights(first_stage: &[f64]) -> Vec<f64> {
    first_stage.iter().map(|b| if b.abs() > 0.0 { (1.0 / b.abs()).min(WEIGHT_CAP) } else { WEIGHT_CAP }).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveLasso {
    pub ridge: RidgeCv,
    pub path: L1Path,
}

/// Ridge-weighted LASSO path. `grid = None` uses the default grid for the weights.
pub fn adaptive_lasso(problem: &RegressionProblem, grid: Option<&[f64]>, config: &LassoConfig) -> Result<AdaptiveLasso> {
    let ridge = ridge_cv(problem, RIDGE_FOLDS, RIDGE_GRID_SIZE)?;
    let weights = adaptive_weights(&ridge.beta);
    let owned;
    let grid = match grid {
        Some(g) => g,
        None => {
            owned = default_grid(problem, &weights, config);
            &owned
        }
    };
    let path = lasso_path(problem, grid, &weights, config)?;
    Ok(AdaptiveLasso { ridge, path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::solve_ols;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(t: usize, p: usize, seed: u64, signal: &[(usize, f64)]) -> RegressionProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(t, p, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(t, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            signal.iter().map(|&(j, b)| b * x[(i, j)]).sum::<f64>() + e
        });
        RegressionProblem::standardized(x, y, None).unwrap().0
    }

    #[test]
    fn zero_solution_at_lambda_max() {
        let p = gaussian(50, 10, 1, &[(0, 1.0)]);
        let w = vec![1.0; 10];
        let lm = lambda_max(&p, &w);
        let path = lasso_path(&p, &[lm * 1.0001, lm], &w, &LassoConfig::default()).unwrap();
        for f in &path.fits {
            assert!(f.beta.iter().all(|b| *b == 0.0));
            assert!(f.kkt_violation <= 1e-4);
        }
    }

    #[test]
    fn vanishing_penalty_approaches_ols() {
        let p = gaussian(80, 6, 2, &[(0, 1.0), (3, -0.5)]);
        let w = vec![1.0; 6];
        let grid = log_grid(lambda_max(&p, &w), 1e-7, 60);
        let path = lasso_path(&p, &grid, &w, &LassoConfig::default()).unwrap();
        let last = path.fits.last().unwrap();
        let ols = solve_ols(&p, &[0, 1, 2, 3, 4, 5]).unwrap();
        for j in 0..6 {
            assert!((last.beta[j] - ols.coefficients()[j]).abs() < 1e-3);
        }
    }

    #[test]
    fn orthogonal_design_soft_thresholds_ols() {
        let t = 64;
        let x = DMatrix::from_fn(t, 6, |i, j| {
            let f = (j / 2 + 1) as f64;
            let a = 2.0 * std::f64::consts::PI * f * i as f64 / t as f64;
            if j % 2 == 0 {
                a.cos()
            } else {
                a.sin()
            }
        });
        let y = DVector::from_fn(t, |i, _| 2.0 * x[(i, 0)] - 0.7 * x[(i, 3)] + 0.3 * x[(i, 5)] + ((i * 37) % 11) as f64 / 20.0);
        let p = RegressionProblem::new(x, y, None).unwrap();
        let w = vec![1.0, 2.0, 1.0, 0.5, 1.0, 3.0];
        let grid = log_grid(lambda_max(&p, &w), 1e-2, 15);
        let path = lasso_path(&p, &grid, &w, &LassoConfig::default()).unwrap();
        for f in &path.fits {
            for j in 0..6 {
                let c = p.col_sq()[j];
                let ols = p.xty()[j] / c;
                let shrink = f.lambda * w[j] / (2.0 * c);
                let oracle = ols.signum() * (ols.abs() - shrink).max(0.0);
                assert!((f.beta[j] - oracle).abs() < 1e-8, "lambda {} col {j}", f.lambda);
            }
        }
    }

    #[test]
    fn kkt_certificates_along_path() {
        let p = gaussian(60, 120, 3, &[(0, 1.0), (5, 1.0), (9, 1.0)]);
        let w = vec![1.0; 120];
        let path = lasso_path(&p, &default_grid(&p, &w, &LassoConfig::default()), &w, &LassoConfig::default()).unwrap();
        for f in &path.fits {
            assert!(f.converged, "lambda {} sweeps {} kkt {} active {}", f.lambda, f.sweeps, f.kkt_violation, f.active().len());
            assert!(f.kkt_violation <= 1e-4, "{}", f.kkt_violation);
            assert!(f.active().len() < 60);
        }
    }

    #[test]
    fn uniform_weights_rescale_lambda() {
        let p = gaussian(50, 20, 4, &[(2, 1.0), (7, 0.6)]);
        let cfg = LassoConfig::default();
        let ones = vec![1.0; 20];
        let threes = vec![3.0; 20];
        let grid = default_grid(&p, &ones, &cfg);
        let a = lasso_path(&p, &grid, &ones, &cfg).unwrap();
        let scaled: Vec<f64> = grid.iter().map(|l| l / 3.0).collect();
        let b = lasso_path(&p, &scaled, &threes, &cfg).unwrap();
        for (fa, fb) in a.fits.iter().zip(&b.fits) {
            for (x, y) in fa.beta.iter().zip(&fb.beta) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn capped_noise_column_enters_last() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = 80;
        let x = DMatrix::from_fn(t, 4, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(t, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[(i, 0)] + 0.8 * x[(i, 1)] + 0.6 * x[(i, 2)] + 0.3 * e
        });
        let (p, _) = RegressionProblem::standardized(x, y, None).unwrap();
        let ridge = ridge_cv(&p, RIDGE_FOLDS, RIDGE_GRID_SIZE).unwrap();
        let mut first = ridge.beta.clone();
        first[3] = 1e-9;
        let w = adaptive_weights(&first);
        assert_eq!(w[3], WEIGHT_CAP);
        let cfg = LassoConfig::default();
        let path = lasso_path(&p, &default_grid(&p, &w, &cfg), &w, &cfg).unwrap();
        for f in &path.fits {
            if f.beta[3] != 0.0 {
                assert!(f.beta[0] != 0.0 && f.beta[1] != 0.0 && f.beta[2] != 0.0);
            }
        }
    }

    #[test]
    fn ridge_matches_normal_equations() {
        for (t, pdim) in [(40, 5), (20, 30)] {
            let p = gaussian(t, pdim, 6, &[(0, 1.0)]);
            let solver = RidgeSolver::new(&p);
            let alpha = 3.5;
            let beta = solver.solve(alpha);
            let x = p.x();
            let lhs = x.tr_mul(x) + DMatrix::identity(pdim, pdim) * alpha;
            let direct = lhs.lu().solve(&x.tr_mul(p.y())).unwrap();
            assert!((beta - direct).amax() < 1e-8);
        }
    }

    #[test]
    fn adaptive_lasso_runs_end_to_end() {
        let p = gaussian(100, 200, 7, &[(0, 1.0), (1, 1.0), (2, 1.0)]);
        let fit = adaptive_lasso(&p, None, &LassoConfig::default()).unwrap();
        assert!(fit.ridge.alpha > 0.0);
        assert!(fit.path.fits.iter().all(|f| f.kkt_violation <= 1e-4));
        let dense = fit.path.fits.last().unwrap().active();
        assert!([0, 1, 2].iter().all(|j| dense.contains(j)));
    }

    #[test]
    fn bad_inputs_rejected() {
        let p = gaussian(30, 4, 8, &[]);
        let cfg = LassoConfig::default();
        assert!(lasso_path(&p, &[1.0, 2.0], &[1.0; 4], &cfg).is_err());
        assert!(lasso_path(&p, &[1.0], &[1.0, 0.0, 1.0, 1.0], &cfg).is_err());
        assert!(lasso_path(&p, &[1.0], &[1.0; 3], &cfg).is_err());
    }
}
