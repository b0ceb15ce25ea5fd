//! Least-squares kernels and incremental update/downdate of a fitted support.
//!
//! `OlsState` keeps `(X_U' X_U)^{-1}` explicitly. Adding a column uses the
//! bordered-inverse formula, dropping one uses the partitioned downdate
//! `M11 - u u' / m`, so greedy searches never refactor the Gram matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::problem::RegressionProblem;

/// Smallest admissible Gram eigenvalue for standardized columns.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Re-solve from scratch after this many incremental updates.
pub const REFRESH_INTERVAL: usize = 50;

/// `e_{z|X_U}` at or below `COLLINEARITY_FACTOR * T` marks a collinear candidate.
pub const COLLINEARITY_FACTOR: f64 = 1e-8;

pub fn collinearity_tolerance(problem: &RegressionProblem) -> f64 {
    COLLINEARITY_FACTOR * problem.n_obs() as f64
}

/// Least-squares fit restricted to an ordered support.
#[derive(Debug, Clone)]
pub struct OlsState {
    support: Vec<usize>,
    gram_inv: DMatrix<f64>,
    coefficients: DVector<f64>,
    intercept: f64,
    sse: f64,
    residuals: DVector<f64>,
    updates: usize,
}

impl OlsState {
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn gram_inverse(&self) -> &DMatrix<f64> {
        &self.gram_inv
    }

    /// Coefficients aligned with `support()`.
    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn sse(&self) -> f64 {
        self.sse
    }

    pub fn residuals(&self) -> &DVector<f64> {
        &self.residuals
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    fn intercept_for(problem: &RegressionProblem, support: &[usize], beta: &DVector<f64>) -> f64 {
        let xm = problem.x_mean();
        problem.y_mean() - support.iter().zip(beta.iter()).map(|(&j, b)| xm[j] * b).sum::<f64>()
    }

    /// Dense Gram matrix of the support, for audits.
    pub fn gram(&self, problem: &RegressionProblem) -> DMatrix<f64> {
        gram_of(problem, &self.support)
    }
}

fn gram_of(problem: &RegressionProblem, support: &[usize]) -> DMatrix<f64> {
    let x = problem.x();
    let k = support.len();
    let mut g = DMatrix::zeros(k, k);
    for a in 0..k {
        let ca = x.column(support[a]);
        g[(a, a)] = problem.col_sq()[support[a]];
        for b in 0..a {
            let v = ca.dot(&x.column(support[b]));
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    g
}

fn check_support(problem: &RegressionProblem, support: &[usize]) -> Result<()> {
    let p = problem.n_features();
    if let Some(&bad) = support.iter().find(|&&j| j >= p) {
        return Err(Error::InvalidInput(format!("column {bad} out of range (p = {p})")));
    }
    Ok(())
}

fn rank_threshold(problem: &RegressionProblem, gram: &DMatrix<f64>) -> f64 {
    let k = gram.nrows().max(1) as f64;
    let t1 = (problem.n_obs() as f64 - 1.0).max(1.0);
    // Scale so that standardized columns (diagonal T - 1) use RANK_TOLERANCE as is.
    RANK_TOLERANCE * (gram.trace() / k / t1).max(f64::MIN_POSITIVE)
}

/// OLS with intercept on the given support.
///
/// An empty support yields the intercept-only fit.
pub fn solve_ols(problem: &RegressionProblem, support: &[usize]) -> Result<OlsState> {
    check_support(problem, support)?;
    let t = problem.n_obs();
    let k = support.len();
    if k == 0 {
        return Ok(OlsState {
            support: Vec::new(),
            gram_inv: DMatrix::zeros(0, 0),
            coefficients: DVector::zeros(0),
            intercept: problem.y_mean(),
            sse: problem.sst(),
            residuals: problem.y().clone(),
            updates: 0,
        });
    }
    if k >= t {
        return Err(Error::RankDeficient { support: support.to_vec() });
    }
    let gram = gram_of(problem, support);
    let tol = rank_threshold(problem, &gram);
    let eig = SymmetricEigen::new(gram);
    if eig.eigenvalues.iter().any(|&l| !(l > tol)) {
        return Err(Error::RankDeficient { support: support.to_vec() });
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    let gram_inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
    let xty = DVector::from_iterator(k, support.iter().map(|&j| problem.xty()[j]));
    let beta = &gram_inv * xty;
    let fitted = problem.x_times_sparse(support.iter().copied().zip(beta.iter().copied()));
    let residuals = problem.y() - fitted;
    let sse = residuals.norm_squared();
    Ok(OlsState {
        intercept: OlsState::intercept_for(problem, support, &beta),
        support: support.to_vec(),
        gram_inv,
        coefficients: beta,
        sse,
        residuals,
        updates: 0,
    })
}

/// SSE of the OLS fit on `support` via Cholesky, without forming residuals.
pub fn subset_sse(problem: &RegressionProblem, support: &[usize]) -> Result<f64> {
    check_support(problem, support)?;
    let k = support.len();
    if k == 0 {
        return Ok(problem.sst());
    }
    if k >= problem.n_obs() {
        return Err(Error::RankDeficient { support: support.to_vec() });
    }
    let gram = gram_of(problem, support);
    let tol = rank_threshold(problem, &gram);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::RankDeficient { support: support.to_vec() })?;
    if chol.l_dirty().diagonal().iter().any(|d| !(d * d > tol)) {
        return Err(Error::RankDeficient { support: support.to_vec() });
    }
    let xty = DVector::from_iterator(k, support.iter().map(|&j| problem.xty()[j]));
    let beta = chol.solve(&xty);
    Ok((problem.sst() - beta.dot(&xty)).max(0.0))
}

impl OlsState {
    /// Adds column `z` and returns the SSE decrement `(y'e_z)^2 / e_{z|X_U}`.
    pub fn add_column_delta(&self, problem: &RegressionProblem, z: usize) -> Result<(f64, OlsState)> {
        check_support(problem, &[z])?;
        if self.support.contains(&z) {
            return Err(Error::InvalidInput(format!("column {z} already in support")));
        }
        let x = problem.x();
        let xz = x.column(z);
        let k = self.len();
        let w = DVector::from_iterator(k, self.support.iter().map(|&j| x.column(j).dot(&xz)));
        let a = &self.gram_inv * &w;
        let e = problem.col_sq()[z] - w.dot(&a);
        if !(e > collinearity_tolerance(problem)) {
            return Err(Error::Collinear { column: z });
        }
        let yez = problem.xty()[z]
            - self.support.iter().zip(a.iter()).map(|(&j, ai)| problem.xty()[j] * ai).sum::<f64>();
        let delta = yez * yez / e;

        let mut inv = DMatrix::zeros(k + 1, k + 1);
        for r in 0..k {
            for c in 0..k {
                inv[(r, c)] = self.gram_inv[(r, c)] + a[r] * a[c] / e;
            }
            inv[(r, k)] = -a[r] / e;
            inv[(k, r)] = -a[r] / e;
        }
        inv[(k, k)] = 1.0 / e;

        let step = yez / e;
        let mut beta = DVector::zeros(k + 1);
        for r in 0..k {
            beta[r] = self.coefficients[r] - a[r] * step;
        }
        beta[k] = step;

        // e_z = z - X_U a
        let mut ez = xz.clone_owned();
        for (&j, ai) in self.support.iter().zip(a.iter()) {
            ez.axpy(-ai, &x.column(j), 1.0);
        }
        let residuals = &self.residuals - ez * step;

        let mut support = self.support.clone();
        support.push(z);
        let next = OlsState {
            intercept: OlsState::intercept_for(problem, &support, &beta),
            sse: (self.sse - delta).max(0.0),
            support,
            gram_inv: inv,
            coefficients: beta,
            residuals,
            updates: self.updates + 1,
        };
        Ok((delta, next.maybe_refresh(problem)?))
    }

    /// Drops the column at position `j` of the support and returns the SSE
    /// increment `(y' Z u + m y' x_j)^2 / m`.
    pub fn drop_column_delta(&self, problem: &RegressionProblem, j: usize) -> Result<(f64, OlsState)> {
        let k = self.len();
        if k == 0 {
            return Err(Error::InvalidInput("cannot drop from an empty support".into()));
        }
        if j >= k {
            return Err(Error::InvalidInput(format!("position {j} outside support of size {k}")));
        }
        let delta = self.drop_increment(problem, j);
        let m = self.gram_inv[(j, j)];
        let keep: Vec<usize> = (0..k).filter(|&r| r != j).collect();
        let u = DVector::from_iterator(k - 1, keep.iter().map(|&r| self.gram_inv[(r, j)]));
        let inv = DMatrix::from_fn(k - 1, k - 1, |r, c| {
            self.gram_inv[(keep[r], keep[c])] - u[r] * u[c] / m
        });
        let bj = self.coefficients[j];
        let beta = DVector::from_iterator(
            k - 1,
            keep.iter().zip(u.iter()).map(|(&r, ur)| self.coefficients[r] - ur * bj / m),
        );
        let support: Vec<usize> = keep.iter().map(|&r| self.support[r]).collect();
        let fitted = problem.x_times_sparse(support.iter().copied().zip(beta.iter().copied()));
        let residuals = problem.y() - fitted;
        let next = OlsState {
            intercept: OlsState::intercept_for(problem, &support, &beta),
            sse: self.sse + delta,
            support,
            gram_inv: inv,
            coefficients: beta,
            residuals,
            updates: self.updates + 1,
        };
        Ok((delta, next.maybe_refresh(problem)?))
    }

    /// SSE increment from deleting position `j`, without building the new state.
    pub fn drop_increment(&self, problem: &RegressionProblem, j: usize) -> f64 {
        let m = self.gram_inv[(j, j)];
        let xty = problem.xty();
        let yzu: f64 = (0..self.len())
            .filter(|&r| r != j)
            .map(|r| self.gram_inv[(r, j)] * xty[self.support[r]])
            .sum();
        let v = yzu + m * xty[self.support[j]];
        v * v / m
    }

    fn maybe_refresh(self, problem: &RegressionProblem) -> Result<OlsState> {
        if self.updates > 0 && self.updates % REFRESH_INTERVAL == 0 {
            let mut fresh = solve_ols(problem, &self.support)?;
            fresh.updates = self.updates;
            Ok(fresh)
        } else {
            Ok(self)
        }
    }
}

/// Principal components of a complete, column-standardized panel.
#[derive(Debug, Clone)]
pub struct Pca {
    /// n × s, orthonormal columns.
    pub loadings: DMatrix<f64>,
    /// T × s, mutually orthogonal columns.
    pub scores: DMatrix<f64>,
    /// Leading eigenvalues of `Z'Z / (T - 1)`, descending.
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    /// `scores * loadings'` using the first `s` components.
    pub fn common_component(&self, s: usize) -> DMatrix<f64> {
        let s = s.min(self.loadings.ncols());
        self.scores.columns(0, s) * self.loadings.columns(0, s).transpose()
    }
}

pub fn principal_components(z: &DMatrix<f64>, s: usize) -> Result<Pca> {
    let (t, n) = z.shape();
    if s == 0 || s > t.min(n) {
        return Err(Error::InvalidInput(format!("component count {s} outside 1..={}", t.min(n))));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("panel has missing or non-finite entries".into()));
    }
    let denom = (t as f64 - 1.0).max(1.0);
    let mut loadings = DMatrix::zeros(n, s);
    let mut eigenvalues = Vec::with_capacity(s);
    if t < n {
        let eig = SymmetricEigen::new(z * z.transpose());
        let order = descending(&eig.eigenvalues);
        for (c, &i) in order.iter().take(s).enumerate() {
            let lambda = eig.eigenvalues[i].max(0.0);
            eigenvalues.push(lambda / denom);
            if lambda > 0.0 {
                let v = z.tr_mul(&eig.eigenvectors.column(i)) / lambda.sqrt();
                loadings.set_column(c, &v);
            }
        }
    } else {
        let eig = SymmetricEigen::new(z.tr_mul(z));
        let order = descending(&eig.eigenvalues);
        for (c, &i) in order.iter().take(s).enumerate() {
            eigenvalues.push(eig.eigenvalues[i].max(0.0) / denom);
            loadings.set_column(c, &eig.eigenvectors.column(i));
        }
    }
    for mut col in loadings.column_iter_mut() {
        let (mut best, mut best_abs) = (0.0, -1.0);
        for &v in col.iter() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = v;
            }
        }
        if best < 0.0 {
            col.neg_mut();
        }
    }
    let scores = z * &loadings;
    Ok(Pca { loadings, scores, eigenvalues })
}

fn descending(values: &DVector<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Power-iteration estimate of the largest eigenvalue of `X'X` (centered design).
pub fn largest_gram_eigenvalue(problem: &RegressionProblem, iterations: usize) -> f64 {
    let p = problem.n_features();
    let x = problem.x();
    let mut v = DVector::from_fn(p, |j, _| 1.0 + 0.01 * ((j * 7919) % 13) as f64);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..iterations.max(1) {
        let xv = x * &v;
        estimate = xv.norm_squared();
        let w = x.tr_mul(&xv);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
    }
    estimate.max((x * &v).norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(t: usize, p: usize, seed: u64) -> RegressionProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(t, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y = DVector::from_fn(t, |i, _| x[(i, 0)] - 0.5 * x[(i, 2 % p)] + rng.random::<f64>());
        RegressionProblem::new(x, y, None).unwrap()
    }

    /// Normal equations with an explicit intercept column and an explicit inverse.
    fn normal_equations_sse(problem: &RegressionProblem, support: &[usize]) -> f64 {
        let t = problem.n_obs();
        let d = DMatrix::from_fn(t, support.len() + 1, |i, c| {
            if c == 0 {
                1.0
            } else {
                problem.raw_x(i, support[c - 1])
            }
        });
        let y = DVector::from_fn(t, |i, _| problem.raw_y(i));
        let inv = (d.transpose() * &d).try_inverse().unwrap();
        let b = inv * d.transpose() * &y;
        (y - d * b).norm_squared()
    }

    #[test]
    fn exact_line_fit() {
        let s = (2.0f64 / 3.0).sqrt();
        let x = DMatrix::from_column_slice(3, 1, &[-1.0 / s, 0.0, 1.0 / s]);
        let y = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let p = RegressionProblem::new(x, y, None).unwrap();
        let st = solve_ols(&p, &[0]).unwrap();
        assert!((st.intercept() - 2.0).abs() < 1e-12);
        assert!(st.sse() < 1e-20);
    }

    #[test]
    fn empty_support_is_intercept_only() {
        let p = random_problem(20, 3, 1);
        let st = solve_ols(&p, &[]).unwrap();
        let ybar = (0..20).map(|i| p.raw_y(i)).sum::<f64>() / 20.0;
        let sst: f64 = (0..20).map(|i| (p.raw_y(i) - ybar).powi(2)).sum();
        assert!((st.sse() - sst).abs() < 1e-10);
        assert!((st.intercept() - ybar).abs() < 1e-12);
    }

    #[test]
    fn matches_normal_equations_oracle() {
        let p = random_problem(30, 8, 42);
        let st = solve_ols(&p, &[1, 3, 5]).unwrap();
        let oracle = normal_equations_sse(&p, &[1, 3, 5]);
        assert!((st.sse() - oracle).abs() < 1e-8);
        assert!((st.residuals().norm_squared() - st.sse()).abs() < 1e-8);
        let fast = subset_sse(&p, &[1, 3, 5]).unwrap();
        assert!((fast - oracle).abs() < 1e-8);
    }

    #[test]
    fn rank_deficient_support_is_rejected() {
        let mut x = DMatrix::from_fn(10, 3, |i, j| ((i + 1) * (j + 2)) as f64 + (i * i) as f64 * 0.1);
        for i in 0..10 {
            x[(i, 2)] = 2.0 * x[(i, 0)] - x[(i, 1)];
        }
        let y = DVector::from_fn(10, |i, _| i as f64);
        let p = RegressionProblem::new(x, y, None).unwrap();
        assert!(matches!(solve_ols(&p, &[0, 1, 2]), Err(Error::RankDeficient { .. })));
        assert!(matches!(subset_sse(&p, &[0, 1, 2]), Err(Error::RankDeficient { .. })));
        let st = solve_ols(&p, &[0, 1]).unwrap();
        assert!(matches!(st.add_column_delta(&p, 2), Err(Error::Collinear { column: 2 })));
        assert!(matches!(solve_ols(&p, &[0, 0]), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn add_on_empty_support_is_single_projection() {
        let p = random_problem(25, 4, 3);
        let st = solve_ols(&p, &[]).unwrap();
        let (delta, next) = st.add_column_delta(&p, 2).unwrap();
        let expected = p.xty()[2].powi(2) / p.col_sq()[2];
        assert!((delta - expected).abs() < 1e-10);
        assert!((next.sse() - (p.sst() - expected)).abs() < 1e-10);
    }

    #[test]
    fn add_orthogonal_to_residual_gives_zero_delta() {
        // x1 is orthogonal to both y and x0.
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);
        let y = DVector::from_column_slice(&[2.0, -2.0, 2.0, -2.0]);
        let p = RegressionProblem::new(x, y, None).unwrap();
        let st = solve_ols(&p, &[0]).unwrap();
        let (delta, _) = st.add_column_delta(&p, 1).unwrap();
        assert!(delta.abs() < 1e-12);
    }

    #[test]
    fn add_chain_matches_refit() {
        let p = random_problem(50, 10, 11);
        let mut st = solve_ols(&p, &[]).unwrap();
        for z in [2, 7, 4] {
            let before = st.sse();
            let (delta, next) = st.add_column_delta(&p, z).unwrap();
            assert!(delta >= 0.0);
            assert!((next.sse() - (before - delta)).abs() < 1e-10);
            st = next;
        }
        let refit = solve_ols(&p, &[2, 7, 4]).unwrap();
        assert!((st.sse() - refit.sse()).abs() < 1e-8);
        assert!((st.intercept() - refit.intercept()).abs() < 1e-8);
        assert!((st.coefficients() - refit.coefficients()).norm() < 1e-8);
        let id = st.gram_inverse() * st.gram(&p);
        assert!((id - DMatrix::identity(3, 3)).norm() < 1e-8);
    }

    #[test]
    fn each_single_drop_matches_refit() {
        let p = random_problem(40, 6, 5);
        let base = solve_ols(&p, &[0, 2, 3, 5]).unwrap();
        for j in 0..4 {
            let (delta, next) = base.drop_column_delta(&p, j).unwrap();
            let mut rest = vec![0, 2, 3, 5];
            rest.remove(j);
            let refit = solve_ols(&p, &rest).unwrap();
            assert!(delta >= 0.0);
            assert!((next.sse() - refit.sse()).abs() < 1e-8);
            assert!((delta - (refit.sse() - base.sse())).abs() < 1e-8);
            assert_eq!(next.support(), rest.as_slice());
        }
    }

    #[test]
    fn drop_only_column_gives_intercept_only() {
        let p = random_problem(20, 3, 9);
        let st = solve_ols(&p, &[1]).unwrap();
        let (_, next) = st.drop_column_delta(&p, 0).unwrap();
        assert!(next.is_empty());
        assert!((next.sse() - p.sst()).abs() < 1e-8);
        assert!((next.intercept() - p.y_mean()).abs() < 1e-10);
    }

    #[test]
    fn add_then_drop_recovers_state() {
        let p = random_problem(30, 5, 21);
        let st = solve_ols(&p, &[0, 3]).unwrap();
        let (_, added) = st.add_column_delta(&p, 1).unwrap();
        let (_, back) = added.drop_column_delta(&p, 2).unwrap();
        assert!((back.sse() - st.sse()).abs() < 1e-8);
        assert_eq!(back.support(), st.support());
    }

    #[test]
    fn pca_rank_one_and_trace_identity() {
        let u = DVector::from_fn(12, |i, _| (i as f64 - 5.5) / 3.0);
        let v = DVector::from_fn(5, |j, _| (j as f64 + 1.0) / 2.0);
        let z = &u * v.transpose();
        let pca = principal_components(&z, 1).unwrap();
        assert!((pca.common_component(1) - &z).norm_squared() < 1e-8);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = DMatrix::from_fn(15, 6, |_, _| rng.random::<f64>() - 0.5);
        let pca = principal_components(&z, 6).unwrap();
        let total: f64 = z.column_iter().map(|c| c.norm_squared()).sum::<f64>() / 14.0;
        let sum: f64 = pca.eigenvalues.iter().sum();
        assert!((total - sum).abs() < 1e-6);
    }

    #[test]
    fn power_iteration_tracks_top_eigenvalue() {
        let p = random_problem(40, 6, 8);
        let eig = SymmetricEigen::new(p.x().tr_mul(p.x()));
        let top = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let est = largest_gram_eigenvalue(&p, 200);
        assert!((est - top).abs() / top < 1e-6);
    }
}
