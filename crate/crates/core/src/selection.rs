//! Tuning-parameter selection: k-fold CV, forward cross-validation, BIC and AIC.
//!
//! Candidates are indexed in order of increasing model complexity (larger k,
//! smaller λ), so breaking ties towards the lower index always prefers the
//! more parsimonious model.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::SubsetModel;
use crate::problem::RegressionProblem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionPlan {
    KFold { folds: usize },
    ForwardCv { validation: usize },
    Bic,
    Aic,
}

impl SelectionPlan {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionPlan::KFold { .. } => "kfold",
            SelectionPlan::ForwardCv { .. } => "fcv",
            SelectionPlan::Bic => "bic",
            SelectionPlan::Aic => "aic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Bic,
    Aic,
}

/// `T ln(SSE / T) + penalty * params` with penalty `ln T` (BIC) or 2 (AIC).
pub fn information_criterion(criterion: Criterion, sse: f64, t: usize, params: usize) -> f64 {
    let tf = t as f64;
    let penalty = match criterion {
        Criterion::Bic => tf.ln(),
        Criterion::Aic => 2.0,
    };
    tf * (sse.max(f64::MIN_POSITIVE) / tf).ln() + penalty * params as f64
}

/// Index of the smallest finite score; ties keep the lowest index.
pub fn argmin_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|b| *s < scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Random partition of `0..n` into `folds` blocks of near-equal size, each sorted.
pub fn kfold_partition<R: Rng + ?Sized>(n: usize, folds: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let folds = folds.clamp(1, n.max(1));
    (0..folds)
        .map(|f| {
            let mut block = idx[f * n / folds..(f + 1) * n / folds].to_vec();
            block.sort_unstable();
            block
        })
        .collect()
}

/// A family of candidate models fitted on any training problem.
pub trait PathFitter {
    fn n_candidates(&self) -> usize;
    /// One entry per candidate; `None` when the candidate could not be fitted.
    fn fit_path(&self, problem: &RegressionProblem) -> Result<Vec<Option<SubsetModel>>>;
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub chosen: usize,
    /// Mean held-out squared error (or criterion value) per candidate.
    pub scores: Vec<f64>,
    pub model: SubsetModel,
}

fn held_out_sse(model: &SubsetModel, problem: &RegressionProblem, rows: &[usize]) -> f64 {
    rows.iter()
        .map(|&i| (problem.raw_y(i) - model.predict_row(|j| problem.raw_x(i, j))).powi(2))
        .sum()
}

fn complement(n: usize, rows: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| rows.binary_search(i).is_err()).collect()
}

fn finish(scores: Vec<f64>, full: Vec<Option<SubsetModel>>) -> Result<Selection> {
    let masked: Vec<f64> =
        scores.iter().zip(&full).map(|(s, m)| if m.is_some() { *s } else { f64::INFINITY }).collect();
    let chosen = argmin_first(&masked).ok_or_else(|| Error::InvalidInput("no candidate could be scored".into()))?;
    let model = full.into_iter().nth(chosen).flatten().expect("masked above");
    Ok(Selection { chosen, scores, model })
}

/// k-fold CV over a fitted path, then refit of the chosen candidate on all rows.
pub fn kfold_select<R: Rng + ?Sized>(
    problem: &RegressionProblem,
    fitter: &dyn PathFitter,
    folds: usize,
    rng: &mut R,
) -> Result<Selection> {
    let n = problem.n_obs();
    let nc = fitter.n_candidates();
    let mut scores = vec![0.0; nc];
    for held in kfold_partition(n, folds, rng) {
        let train = problem.subset_rows(&complement(n, &held))?;
        let path = fitter.fit_path(&train)?;
        for (c, m) in path.iter().enumerate().take(nc) {
            scores[c] += match m {
                Some(m) => held_out_sse(m, problem, &held),
                None => f64::INFINITY,
            };
        }
    }
    for s in &mut scores {
        *s /= n as f64;
    }
    finish(scores, fitter.fit_path(problem)?)
}

/// Fits on all but the last `validation` rows, scores one-step predictions on
/// the validation block without refitting, then refits the winner on all rows.
pub fn forward_cv_select(
    problem: &RegressionProblem,
    fitter: &dyn PathFitter,
    validation: usize,
) -> Result<Selection> {
    let n = problem.n_obs();
    if validation == 0 || validation + 2 > n {
        return Err(Error::InsufficientHistory { needed: validation + 2, available: n });
    }
    let fit_rows: Vec<usize> = (0..n - validation).collect();
    let val_rows: Vec<usize> = (n - validation..n).collect();
    let train = problem.subset_rows(&fit_rows)?;
    let path = fitter.fit_path(&train)?;
    let scores = (0..fitter.n_candidates())
        .map(|c| match path.get(c).and_then(|m| m.as_ref()) {
            Some(m) => held_out_sse(m, problem, &val_rows) / validation as f64,
            None => f64::INFINITY,
        })
        .collect();
    finish(scores, fitter.fit_path(problem)?)
}

/// Chooses by BIC or AIC on the full-data path. Parameters are the support
/// size plus the intercept.
pub fn criterion_select(
    problem: &RegressionProblem,
    fitter: &dyn PathFitter,
    criterion: Criterion,
) -> Result<Selection> {
    let path = fitter.fit_path(problem)?;
    let t = problem.n_obs();
    let scores = path
        .iter()
        .map(|m| match m {
            Some(m) => information_criterion(criterion, m.sse, t, m.size() + 1),
            None => f64::INFINITY,
        })
        .collect();
    finish(scores, path)
}

/// Dispatches on the plan.
pub fn select<R: Rng + ?Sized>(
    problem: &RegressionProblem,
    fitter: &dyn PathFitter,
    plan: SelectionPlan,
    rng: &mut R,
) -> Result<Selection> {
    match plan {
        SelectionPlan::KFold { folds } => kfold_select(problem, fitter, folds, rng),
        SelectionPlan::ForwardCv { validation } => forward_cv_select(problem, fitter, validation),
        SelectionPlan::Bic => criterion_select(problem, fitter, Criterion::Bic),
        SelectionPlan::Aic => criterion_select(problem, fitter, Criterion::Aic),
    }
}
