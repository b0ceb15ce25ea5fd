//! Brute-force best-subset search, used as an oracle on small problems.

use crate::error::{Error, Result};
use crate::linalg::subset_sse;
use crate::model::{SolverKind, SubsetModel};
use crate::problem::RegressionProblem;

/// Calls `f` with every k-combination of `0..p` in lexicographic order.
pub fn for_each_combination(p: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > p {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] < p - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
            if i == 0 {
                return;
            }
        }
    }
}

/// SSE of every size-k subset, in lexicographic order. Rank-deficient subsets get `+inf`.
pub fn enumerate_sse(problem: &RegressionProblem, k: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::new();
    for_each_combination(problem.n_features(), k, |s| {
        let sse = subset_sse(problem, s).unwrap_or(f64::INFINITY);
        out.push((s.to_vec(), sse));
    });
    out
}

/// Minimum-SSE subset of size k; ties keep the lexicographically first subset.
pub fn best_subset(problem: &RegressionProblem, k: usize) -> Result<SubsetModel> {
    if k == 0 || k > problem.n_features() || k >= problem.n_obs() {
        return Err(Error::InvalidK { k, reason: "need 1 <= k <= p and k < T".into() });
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for_each_combination(problem.n_features(), k, |s| {
        if let Ok(sse) = subset_sse(problem, s) {
            if best.as_ref().is_none_or(|(_, b)| sse < *b) {
                best = Some((s.to_vec(), sse));
            }
        }
    });
    let (support, _) = best.ok_or_else(|| Error::RankDeficient { support: Vec::new() })?;
    SubsetModel::refit(problem, &support, SolverKind::Exhaustive)
}
