//! Gradient descent with sparsification: IHT, HTP, CoSaMP and subspace pursuit.
//!
//! All four share one driver. Each solver supplies a step `beta -> beta'`
//! producing a k-sparse iterate; the driver tracks R², applies the stopping
//! rule and re-fits the final support by OLS so every solver reports a
//! least-squares model.

use std::collections::HashSet;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{largest_gram_eigenvalue, solve_ols};
use crate::model::{r_squared, SolverKind, SubsetModel};
use crate::problem::RegressionProblem;

pub const DEFAULT_EPS1: f64 = 0.005;
pub const DEFAULT_EPS2: f64 = 0.01;
pub const DEFAULT_MAX_ITER: usize = 500;
/// Power iterations used for the automatic step size.
pub const POWER_ITERATIONS: usize = 50;
/// An iterate with SSE above this multiple of SST counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e3;
/// Relative SSE increase tolerated before an automatic step is halved.
pub const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// Starts at `1 / max_j 2||x_j||²` and halves until the SSE sequence is
    /// non-increasing, never going below the `Lipschitz` step.
    Auto,
    /// `0.9 / lambda_max(2 X'X)` with lambda_max from power iteration.
    Lipschitz,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdsConfig {
    pub k: usize,
    pub step_size: StepSize,
    pub eps1: f64,
    pub eps2: f64,
    pub max_iter: usize,
}

impl GdsConfig {
    pub fn new(k: usize) -> Self {
        Self { k, step_size: StepSize::Auto, eps1: DEFAULT_EPS1, eps2: DEFAULT_EPS2, max_iter: DEFAULT_MAX_ITER }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps1 > 0.0) || !(self.eps2 > 0.0) {
            return Err(Error::InvalidInput("eps1 and eps2 must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        if let StepSize::Fixed(eta) = self.step_size {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(Error::InvalidInput(format!("step size {eta} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    R2Stalled,
    BetaStalled,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdsIterate {
    pub sse: f64,
    pub r_squared: f64,
    /// Columns that entered the support in this iteration.
    pub support_changes: usize,
    /// SSE of the thresholded vector before the OLS step (HTP only).
    pub pre_refit_sse: Option<f64>,
    /// Size of the merged candidate support (CoSaMP and SP only).
    pub candidate_size: Option<usize>,
    /// Number of nonzeros in the iterate.
    pub nonzeros: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdsTrace {
    pub iterates: Vec<GdsIterate>,
    pub converged: bool,
    pub reason: StopReason,
    /// Set when a support revisits an earlier, non-adjacent support.
    pub cycled: bool,
    pub step_size: f64,
}

/// Keeps the `k` largest-magnitude entries; ties go to the lower index.
pub fn hard_threshold(v: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for j in top_k_indices(v, k) {
        out[j] = v[j];
    }
    out
}

/// Indices of the `k` largest |v_j|, in ascending index order.
pub fn top_k_indices(v: &[f64], k: usize) -> Vec<usize> {
    let p = v.len();
    if k >= p {
        return (0..p).collect();
    }
    if k == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..p).collect();
    let cmp = |a: &usize, b: &usize| v[*b].abs().total_cmp(&v[*a].abs()).then(a.cmp(b));
    idx.select_nth_unstable_by(k - 1, cmp);
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// `2 X'X beta - 2 X'y` on centered data.
pub fn gradient(problem: &RegressionProblem, beta: &DVector<f64>) -> DVector<f64> {
    let resid = problem.y() - problem.x() * beta;
    problem.x().tr_mul(&resid) * -2.0
}

/// SSE of `beta` with the intercept at the response mean.
pub fn sse_of(problem: &RegressionProblem, beta: &DVector<f64>) -> f64 {
    let fitted = problem.x_times_sparse(beta.iter().copied().enumerate());
    (problem.y() - fitted).norm_squared()
}

fn lipschitz_step(problem: &RegressionProblem) -> f64 {
    let lmax = 2.0 * largest_gram_eigenvalue(problem, POWER_ITERATIONS);
    if lmax > 0.0 {
        0.9 / lmax
    } else {
        1.0
    }
}

/// Largest step tried by `StepSize::Auto`: the inverse curvature of the
/// steepest single coordinate.
fn coordinate_step(problem: &RegressionProblem) -> f64 {
    let top = problem.col_sq().iter().cloned().fold(0.0, f64::max);
    if top > 0.0 {
        1.0 / (2.0 * top)
    } else {
        1.0
    }
}

/// Step sizes to try in order.
pub fn step_ladder(problem: &RegressionProblem, step: StepSize) -> Vec<f64> {
    match step {
        StepSize::Fixed(eta) => vec![eta],
        StepSize::Lipschitz => vec![lipschitz_step(problem)],
        StepSize::Auto => {
            let floor = lipschitz_step(problem);
            let mut out = Vec::new();
            let mut eta = coordinate_step(problem);
            while eta > floor {
                out.push(eta);
                eta /= 2.0;
            }
            out.push(floor);
            out
        }
    }
}

pub fn resolve_step_size(problem: &RegressionProblem, step: StepSize) -> f64 {
    step_ladder(problem, step)[0]
}

struct StepOutcome {
    beta: DVector<f64>,
    pre_refit_sse: Option<f64>,
    candidate_size: Option<usize>,
}

fn support_of(beta: &DVector<f64>) -> Vec<usize> {
    beta.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, _)| j).collect()
}

fn ols_dense(problem: &RegressionProblem, support: &[usize]) -> Result<(DVector<f64>, f64)> {
    let st = solve_ols(problem, support)?;
    let mut beta = DVector::zeros(problem.n_features());
    for (&j, b) in st.support().iter().zip(st.coefficients().iter()) {
        beta[j] = *b;
    }
    Ok((beta, st.sse()))
}

fn check_k(problem: &RegressionProblem, k: usize) -> Result<()> {
    if k == 0 || k > problem.n_features() {
        return Err(Error::InvalidK { k, reason: format!("need 1 <= k <= p = {}", problem.n_features()) });
    }
    if k >= problem.n_obs() {
        return Err(Error::InvalidK { k, reason: format!("need k < T = {}", problem.n_obs()) });
    }
    Ok(())
}

fn drive<F>(
    problem: &RegressionProblem,
    config: &GdsConfig,
    solver: SolverKind,
    detect_cycles: bool,
    mut step: F,
) -> Result<(SubsetModel, GdsTrace)>
where
    F: FnMut(&DVector<f64>, f64) -> Result<StepOutcome>,
{
    config.validate()?;
    check_k(problem, config.k)?;
    let ladder = step_ladder(problem, config.step_size);
    let last = ladder.len() - 1;
    for (i, &eta) in ladder.iter().enumerate() {
        match attempt(problem, config, solver, detect_cycles, &mut step, eta) {
            Ok((model, trace)) if i == last || monotone(&trace) => return Ok((model, trace)),
            Err(Error::Diverged { .. }) if i < last => {}
            Err(e) => return Err(e),
            Ok(_) => log::debug!("{solver}: SSE rose with step {eta:e}, halving"),
        }
    }
    unreachable!("the ladder ends with an unconditional attempt")
}

fn monotone(trace: &GdsTrace) -> bool {
    !trace.cycled && trace.iterates.windows(2).all(|w| w[1].sse <= w[0].sse * (1.0 + MONOTONE_SLACK))
}

fn attempt<F>(
    problem: &RegressionProblem,
    config: &GdsConfig,
    solver: SolverKind,
    detect_cycles: bool,
    step: &mut F,
    eta: f64,
) -> Result<(SubsetModel, GdsTrace)>
where
    F: FnMut(&DVector<f64>, f64) -> Result<StepOutcome>,
{
    let sst = problem.sst();
    let mut beta = DVector::zeros(problem.n_features());
    let mut support: Vec<usize> = Vec::new();
    let mut r2_prev = 0.0;
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    seen.insert(support.clone());
    let mut iterates = Vec::new();
    let mut r2_stall_start: Option<usize> = None;
    let mut beta_stall_start: Option<usize> = None;
    let mut outcome = (false, StopReason::MaxIter, false);

    for r in 0..config.max_iter {
        let out = step(&beta, eta)?;
        let next = out.beta;
        let sse = sse_of(problem, &next);
        if !sse.is_finite() || sse > DIVERGENCE_FACTOR * sst.max(f64::MIN_POSITIVE) {
            return Err(Error::Diverged { iterations: r + 1, sse });
        }
        let r2 = r_squared(sse, sst);
        let next_support = support_of(&next);
        let entered = next_support.iter().filter(|j| support.binary_search(j).is_err()).count();
        let dbeta = (&next - &beta).norm_squared();
        iterates.push(GdsIterate {
            sse,
            r_squared: r2,
            support_changes: entered,
            pre_refit_sse: out.pre_refit_sse,
            candidate_size: out.candidate_size,
            nonzeros: next_support.len(),
        });

        let r2_stalled = r2 - r2_prev <= config.eps1;
        let beta_stalled = dbeta <= config.eps2;
        r2_stall_start = if r2_stalled { r2_stall_start.or(Some(r)) } else { None };
        beta_stall_start = if beta_stalled { beta_stall_start.or(Some(r)) } else { None };

        let revisit = detect_cycles && next_support != support && seen.contains(&next_support);
        beta = next;
        r2_prev = r2;
        if revisit {
            outcome = (false, StopReason::MaxIter, true);
            support = next_support;
            break;
        }
        seen.insert(next_support.clone());
        support = next_support;
        if let (Some(a), Some(b)) = (r2_stall_start, beta_stall_start) {
            let reason = if b >= a { StopReason::BetaStalled } else { StopReason::R2Stalled };
            outcome = (true, reason, false);
            break;
        }
    }

    let model = SubsetModel::refit(problem, &support, solver)?;
    let trace = GdsTrace { iterates, converged: outcome.0, reason: outcome.1, cycled: outcome.2, step_size: eta };
    Ok((model, trace))
}

/// Iterative hard thresholding: `beta <- H_k(beta - eta grad)`.
pub fn iht(problem: &RegressionProblem, config: &GdsConfig) -> Result<(SubsetModel, GdsTrace)> {
    let k = config.k;
    drive(problem, config, SolverKind::Iht, false, |beta, eta| {
        let g = gradient(problem, beta);
        let v: Vec<f64> = beta.iter().zip(g.iter()).map(|(b, gi)| b - eta * gi).collect();
        Ok(StepOutcome { beta: DVector::from_vec(hard_threshold(&v, k)), pre_refit_sse: None, candidate_size: None })
    })
}

/// Hard thresholding pursuit: threshold as IHT, then OLS on the kept support.
pub fn htp(problem: &RegressionProblem, config: &GdsConfig) -> Result<(SubsetModel, GdsTrace)> {
    let k = config.k;
    drive(problem, config, SolverKind::Htp, true, |beta, eta| {
        let g = gradient(problem, beta);
        let v: Vec<f64> = beta.iter().zip(g.iter()).map(|(b, gi)| b - eta * gi).collect();
        let thresholded = DVector::from_vec(hard_threshold(&v, k));
        let pre = sse_of(problem, &thresholded);
        let (refit, _) = ols_dense(problem, &support_of(&thresholded))?;
        Ok(StepOutcome { beta: refit, pre_refit_sse: Some(pre), candidate_size: None })
    })
}

fn merged_candidates(beta: &DVector<f64>, g: &DVector<f64>, extra: usize) -> Vec<usize> {
    let mut cand = support_of(beta);
    cand.extend(top_k_indices(g.as_slice(), extra));
    cand.sort_unstable();
    cand.dedup();
    cand
}

/// CoSaMP: merge the support with the top-2k gradient entries, fit, threshold.
pub fn cosamp(problem: &RegressionProblem, config: &GdsConfig) -> Result<(SubsetModel, GdsTrace)> {
    let k = config.k;
    drive(problem, config, SolverKind::Cosamp, true, |beta, _eta| {
        let g = gradient(problem, beta);
        let cand = merged_candidates(beta, &g, 2 * k);
        if cand.len() >= problem.n_obs() {
            return Err(Error::RankDeficient { support: cand });
        }
        let (fit, _) = ols_dense(problem, &cand)?;
        let next = DVector::from_vec(hard_threshold(fit.as_slice(), k));
        Ok(StepOutcome { beta: next, pre_refit_sse: None, candidate_size: Some(cand.len()) })
    })
}

/// Subspace pursuit: merge with the top-k gradient entries, fit, keep the k
/// largest coefficients and fit again.
pub fn subspace_pursuit(problem: &RegressionProblem, config: &GdsConfig) -> Result<(SubsetModel, GdsTrace)> {
    let k = config.k;
    drive(problem, config, SolverKind::Sp, true, |beta, _eta| {
        let g = gradient(problem, beta);
        let cand = merged_candidates(beta, &g, k);
        if cand.len() >= problem.n_obs() {
            return Err(Error::RankDeficient { support: cand });
        }
        let (fit, _) = ols_dense(problem, &cand)?;
        let keep = top_k_indices(fit.as_slice(), k);
        let (next, _) = ols_dense(problem, &keep)?;
        Ok(StepOutcome { beta: next, pre_refit_sse: None, candidate_size: Some(cand.len()) })
    })
}
