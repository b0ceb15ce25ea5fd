//! Forward selection and backward elimination on the incremental OLS kernels.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{collinearity_tolerance, solve_ols, OlsState};
use crate::model::{SolverKind, SubsetModel};
use crate::problem::RegressionProblem;

/// Candidates whose SSE changes differ by at most this much are tied; the
/// lower column index wins.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Nested models produced by a greedy search, ordered by search step.
#[derive(Debug, Clone)]
pub struct GreedyPath {
    pub models: Vec<SubsetModel>,
    /// SSE change at each step (decrement for FS, increment for BE).
    pub deltas: Vec<f64>,
    /// Set when forward selection ran out of non-collinear candidates before `k_max`.
    pub exhausted: bool,
}

impl GreedyPath {
    /// Model with exactly `k` columns, if the path reached it.
    pub fn model_of_size(&self, k: usize) -> Option<&SubsetModel> {
        self.models.iter().find(|m| m.size() == k)
    }
}

/// Default path length for economic data: `min(T / 2, 50)`.
pub fn default_k_max(t: usize) -> usize {
    (t / 2).clamp(1, 50)
}

/// Forward selection up to `k_max` columns.
pub fn forward_select(problem: &RegressionProblem, k_max: usize) -> Result<GreedyPath> {
    let t = problem.n_obs();
    let p = problem.n_features();
    if k_max == 0 || k_max >= t {
        return Err(Error::InvalidK { k: k_max, reason: format!("need 1 <= k_max < T = {t}") });
    }
    let x = problem.x();
    let tol = collinearity_tolerance(problem);
    let mut state = solve_ols(problem, &[])?;
    let mut in_support = vec![false; p];
    // Rows of X_U' X, one per selected column.
    let mut cross: Vec<Vec<f64>> = Vec::with_capacity(k_max);
    let mut models = Vec::with_capacity(k_max);
    let mut deltas = Vec::with_capacity(k_max);
    let mut exhausted = false;

    while state.len() < k_max {
        let k = state.len();
        let scores = candidate_decrements(problem, &state, &cross, &in_support, tol);
        let Some((z, _)) = best_candidate(&scores) else {
            exhausted = true;
            break;
        };
        let (delta, next) = state.add_column_delta(problem, z)?;
        debug_assert_eq!(next.len(), k + 1);
        in_support[z] = true;
        cross.push(x.tr_mul(&x.column(z)).iter().copied().collect());
        state = next;
        deltas.push(delta);
        models.push(SubsetModel::from_ols(&state, problem, SolverKind::Fs));
    }
    Ok(GreedyPath { models, deltas, exhausted })
}

/// SSE decrement `(y'e_z)^2 / e_{z|X_U}` for every admissible candidate.
fn candidate_decrements(
    problem: &RegressionProblem,
    state: &OlsState,
    cross: &[Vec<f64>],
    in_support: &[bool],
    tol: f64,
) -> Vec<Option<f64>> {
    let p = problem.n_features();
    let k = state.len();
    let xty = problem.xty();
    let col_sq = problem.col_sq();
    if k == 0 {
        return (0..p)
            .map(|z| (col_sq[z] > tol).then(|| xty[z] * xty[z] / col_sq[z]))
            .collect();
    }
    let c = DMatrix::from_fn(k, p, |r, z| cross[r][z]);
    let a = state.gram_inverse() * &c;
    let support = state.support();
    (0..p)
        .map(|z| {
            if in_support[z] {
                return None;
            }
            let mut e = col_sq[z];
            let mut yez = xty[z];
            for r in 0..k {
                e -= c[(r, z)] * a[(r, z)];
                yez -= xty[support[r]] * a[(r, z)];
            }
            (e > tol).then(|| yez * yez / e)
        })
        .collect()
}

fn best_candidate(scores: &[Option<f64>]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (z, s) in scores.iter().enumerate() {
        if let Some(v) = *s {
            match best {
                Some((_, b)) if v <= b + TIE_TOLERANCE => {}
                _ => best = Some((z, v)),
            }
        }
    }
    best
}

/// Backward elimination from the full model down to `k_min` columns.
///
/// The returned path starts with the full model.
pub fn backward_eliminate(problem: &RegressionProblem, k_min: usize) -> Result<GreedyPath> {
    let t = problem.n_obs();
    let p = problem.n_features();
    if p >= t {
        return Err(Error::NotApplicable(format!(
            "backward elimination needs p < T (p = {p}, T = {t})"
        )));
    }
    if k_min > p {
        return Err(Error::InvalidK { k: k_min, reason: format!("k_min exceeds p = {p}") });
    }
    let all: Vec<usize> = (0..p).collect();
    let mut state = solve_ols(problem, &all)?;
    let mut models = vec![SubsetModel::from_ols(&state, problem, SolverKind::Be)];
    let mut deltas = Vec::new();
    while state.len() > k_min {
        // Support stays in ascending column order, so the first minimum is the lowest index.
        let mut best: Option<(usize, f64)> = None;
        for j in 0..state.len() {
            let inc = state.drop_increment(problem, j);
            match best {
                Some((_, b)) if inc >= b - TIE_TOLERANCE => {}
                _ => best = Some((j, inc)),
            }
        }
        let (j, _) = best.expect("support is nonempty");
        let (delta, next) = state.drop_column_delta(problem, j)?;
        state = next;
        deltas.push(delta);
        models.push(SubsetModel::from_ols(&state, problem, SolverKind::Be));
    }
    Ok(GreedyPath { models, deltas, exhausted: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::subset_sse;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_problem(t: usize, p: usize, seed: u64, signal: &[(usize, f64)]) -> RegressionProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(t, p, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(t, |i, _| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            signal.iter().map(|&(j, b)| b * x[(i, j)]).sum::<f64>() + noise
        });
        RegressionProblem::standardized(x, y, None).unwrap().0
    }

    #[test]
    fn exact_column_is_selected_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(40, 10, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(40, |i, _| x[(i, 7)]);
        let p = RegressionProblem::new(x, y, None).unwrap();
        let path = forward_select(&p, 1).unwrap();
        assert_eq!(path.models[0].support, vec![7]);
        assert!(path.models[0].sse < 1e-12);
    }

    #[test]
    fn pair_step_never_beats_exhaustive_pairs() {
        for seed in 0..5 {
            let p = gaussian_problem(60, 12, seed, &[(1, 1.0), (4, 0.7), (9, -0.5)]);
            let path = forward_select(&p, 2).unwrap();
            let mut best = f64::INFINITY;
            for a in 0..12 {
                for b in a + 1..12 {
                    best = best.min(subset_sse(&p, &[a, b]).unwrap());
                }
            }
            assert!(path.models[1].sse >= best - 1e-9);
        }
    }

    #[test]
    fn forward_path_is_nested_and_monotone() {
        let p = gaussian_problem(80, 20, 3, &[(0, 1.0), (5, 1.0)]);
        let path = forward_select(&p, 10).unwrap();
        assert_eq!(path.models.len(), 10);
        for w in path.models.windows(2) {
            assert!(w[1].sse <= w[0].sse + 1e-9);
            assert!(w[0].support.iter().all(|j| w[1].support.contains(j)));
        }
        assert!(forward_select(&p, 80).is_err());
        assert!(forward_select(&p, 0).is_err());
    }

    #[test]
    fn forward_stops_when_candidates_are_exhausted() {
        // Four columns spanning a 2-dimensional space.
        let x = DMatrix::from_fn(10, 4, |i, j| {
            let a = i as f64;
            let b = ((i * i) % 7) as f64;
            match j {
                0 => a,
                1 => b,
                2 => a + b,
                _ => a - 2.0 * b,
            }
        });
        let y = DVector::from_fn(10, |i, _| (i as f64).sin());
        let p = RegressionProblem::new(x, y, None).unwrap();
        let path = forward_select(&p, 4).unwrap();
        assert!(path.exhausted);
        assert_eq!(path.models.len(), 2);
    }

    #[test]
    fn backward_removes_null_column_first() {
        let t = 30;
        let x = DMatrix::from_fn(t, 3, |i, j| {
            let s = (2.0 * std::f64::consts::PI * (i as f64) * (j as f64 + 1.0) / t as f64).cos();
            s
        });
        let y = DVector::from_fn(t, |i, _| 2.0 * x[(i, 0)] + 1.5 * x[(i, 2)] + 0.01 * ((i % 3) as f64 - 1.0));
        let p = RegressionProblem::new(x, y, None).unwrap();
        let path = backward_eliminate(&p, 2).unwrap();
        assert_eq!(path.models[1].support, vec![0, 2]);
    }

    #[test]
    fn backward_increments_match_refit() {
        let p = gaussian_problem(100, 10, 17, &[(2, 1.0), (6, 0.5), (8, 0.25)]);
        let path = backward_eliminate(&p, 3).unwrap();
        assert_eq!(path.models.len(), 8);
        for (w, delta) in path.models.windows(2).zip(&path.deltas) {
            let refit = subset_sse(&p, &w[1].support).unwrap();
            assert!((w[1].sse - refit).abs() < 1e-8);
            assert!((delta - (refit - w[0].sse)).abs() < 1e-8);
            assert!(w[1].sse >= w[0].sse - 1e-9);
        }
    }

    #[test]
    fn backward_not_applicable_when_p_exceeds_t() {
        let p = gaussian_problem(100, 120, 2, &[(0, 1.0)]);
        assert!(matches!(backward_eliminate(&p, 1), Err(Error::NotApplicable(_))));
    }
}
