use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_ols, OlsState};
use crate::problem::RegressionProblem;

/// Which procedure produced a fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SolverKind {
    Fs,
    Be,
    Iht,
    Htp,
    Cosamp,
    Sp,
    Smc,
    AdaLasso,
    Exhaustive,
    Truth,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Fs => "FS",
            SolverKind::Be => "BE",
            SolverKind::Iht => "IHT",
            SolverKind::Htp => "HTP",
            SolverKind::Cosamp => "CoSaMP",
            SolverKind::Sp => "SP",
            SolverKind::Smc => "SMC",
            SolverKind::AdaLasso => "adaLASSO",
            SolverKind::Exhaustive => "exhaustive",
            SolverKind::Truth => "true",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "fs" => SolverKind::Fs,
            "be" => SolverKind::Be,
            "iht" => SolverKind::Iht,
            "htp" => SolverKind::Htp,
            "cosamp" => SolverKind::Cosamp,
            "sp" => SolverKind::Sp,
            "smc" => SolverKind::Smc,
            "adalasso" | "ada_lasso" | "ada-lasso" => SolverKind::AdaLasso,
            other => {
                return Err(Error::ConfigInvalid {
                    field: "solvers".into(),
                    reason: format!("unknown solver `{other}`"),
                })
            }
        })
    }
}

/// A fitted sparse linear model.
///
/// Coefficients are on the scale of the problem's columns, so
/// `intercept + sum_j beta_j x_j` predicts from raw column values.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetModel {
    pub support: Vec<usize>,
    pub intercept: f64,
    pub coefficients: BTreeMap<usize, f64>,
    pub sse: f64,
    pub r_squared: f64,
    pub solver: SolverKind,
}

impl SubsetModel {
    pub fn from_ols(state: &OlsState, problem: &RegressionProblem, solver: SolverKind) -> Self {
        let coefficients: BTreeMap<usize, f64> = state
            .support()
            .iter()
            .copied()
            .zip(state.coefficients().iter().copied())
            .collect();
        let mut support: Vec<usize> = state.support().to_vec();
        support.sort_unstable();
        Self {
            support,
            intercept: state.intercept(),
            coefficients,
            sse: state.sse(),
            r_squared: r_squared(state.sse(), problem.sst()),
            solver,
        }
    }

    /// OLS refit on `support`.
    pub fn refit(problem: &RegressionProblem, support: &[usize], solver: SolverKind) -> Result<Self> {
        let state = solve_ols(problem, support)?;
        Ok(Self::from_ols(&state, problem, solver))
    }

    /// Builds a model from centered-scale coefficients (index, value), zeros dropped.
    pub fn from_coefficients(
        problem: &RegressionProblem,
        coefs: impl IntoIterator<Item = (usize, f64)>,
        solver: SolverKind,
    ) -> Self {
        let coefficients: BTreeMap<usize, f64> = coefs.into_iter().filter(|(_, b)| *b != 0.0).collect();
        let fitted = problem.x_times_sparse(coefficients.iter().map(|(&j, &b)| (j, b)));
        let sse = (problem.y() - fitted).norm_squared();
        let xm = problem.x_mean();
        let intercept = problem.y_mean() - coefficients.iter().map(|(&j, &b)| xm[j] * b).sum::<f64>();
        Self {
            support: coefficients.keys().copied().collect(),
            intercept,
            coefficients,
            sse,
            r_squared: r_squared(sse, problem.sst()),
            solver,
        }
    }

    pub fn size(&self) -> usize {
        self.support.len()
    }

    pub fn predict_row(&self, row: impl Fn(usize) -> f64) -> f64 {
        self.intercept + self.coefficients.iter().map(|(&j, &b)| b * row(j)).sum::<f64>()
    }

    /// Predictions for every row of `problem` from its raw column values.
    pub fn predict_problem(&self, problem: &RegressionProblem) -> Vec<f64> {
        (0..problem.n_obs()).map(|i| self.predict_row(|j| problem.raw_x(i, j))).collect()
    }

    pub fn predict_matrix(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows()).map(|i| self.predict_row(|j| x[(i, j)])).collect()
    }

    /// Mean squared error of predictions on `problem`'s raw response.
    pub fn mspe(&self, problem: &RegressionProblem) -> f64 {
        let preds = self.predict_problem(problem);
        let n = problem.n_obs() as f64;
        preds.iter().enumerate().map(|(i, p)| (problem.raw_y(i) - p).powi(2)).sum::<f64>() / n
    }
}

pub fn r_squared(sse: f64, sst: f64) -> f64 {
    if sst > 0.0 {
        1.0 - sse / sst
    } else if sse > 0.0 {
        f64::NEG_INFINITY
    } else {
        1.0
    }
}
