//! Small enumerable instances for checking solvers against exhaustive search.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exhaustive::best_subset;
use crate::greedy::forward_select;
use crate::gds::{cosamp, htp, iht, subspace_pursuit, GdsConfig};
use crate::model::SolverKind;
use crate::paths::SolverSettings;
use crate::problem::RegressionProblem;
use crate::rng::stream;
use crate::smc::smc_best_subset;

/// Relative SSE slack under which a solver counts as matching the optimum.
pub const MATCH_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSpec {
    pub p: usize,
    pub t: usize,
    pub k: usize,
    pub r2: f64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self { p: 15, t: 60, k: 3, r2: 0.8 }
    }
}

impl OracleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.p {
            return Err(Error::InvalidK { k: self.k, reason: format!("need 1 <= k <= p = {}", self.p) });
        }
        if self.p > 30 {
            return Err(Error::InvalidInput(format!("p = {} is too large to enumerate", self.p)));
        }
        if self.t < self.k + 2 {
            return Err(Error::InvalidInput("T must exceed k + 1".into()));
        }
        if !(self.r2 > 0.0 && self.r2 < 1.0) {
            return Err(Error::InvalidInput("R^2 must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Gaussian design with unit coefficients on `k` random columns and noise
/// variance set so the population R² is `r2`. Returns the standardized
/// problem and the true support.
pub fn oracle_instance(spec: &OracleSpec, seed: u64) -> Result<(RegressionProblem, Vec<usize>)> {
    spec.validate()?;
    let mut rng = stream(seed, "oracle", 0);
    let mut truth = sample(&mut rng, spec.p, spec.k).into_vec();
    truth.sort_unstable();
    let x = DMatrix::from_fn(spec.t, spec.p, |_, _| StandardNormal.sample(&mut rng));
    let sigma = (spec.k as f64 * (1.0 - spec.r2) / spec.r2).sqrt();
    let y = DVector::from_fn(spec.t, |i, _| {
        let e: f64 = StandardNormal.sample(&mut rng);
        truth.iter().map(|&j| x[(i, j)]).sum::<f64>() + sigma * e
    });
    Ok((RegressionProblem::standardized(x, y, None)?.0, truth))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub seed: u64,
    pub solver: SolverKind,
    pub optimum_sse: f64,
    pub sse: f64,
    pub matched: bool,
    pub support: Vec<usize>,
}

impl OracleRow {
    pub fn relative_gap(&self) -> f64 {
        (self.sse - self.optimum_sse) / self.optimum_sse.max(f64::MIN_POSITIVE)
    }
}

/// Runs each solver at the true `k` and compares with exhaustive search.
pub fn oracle_check(spec: &OracleSpec, seed: u64, solvers: &[SolverKind], settings: &SolverSettings) -> Result<Vec<OracleRow>> {
    let (problem, _) = oracle_instance(spec, seed)?;
    let best = best_subset(&problem, spec.k)?;
    solvers
        .iter()
        .map(|&solver| {
            let gds = GdsConfig { k: spec.k, ..settings.gds.clone() };
            let model = match solver {
                SolverKind::Fs => forward_select(&problem, spec.k)?.models.pop().expect("k >= 1"),
                SolverKind::Iht => iht(&problem, &gds)?.0,
                SolverKind::Htp => htp(&problem, &gds)?.0,
                SolverKind::Cosamp => cosamp(&problem, &gds)?.0,
                SolverKind::Sp => subspace_pursuit(&problem, &gds)?.0,
                SolverKind::Smc => {
                    let mut smc = settings.smc.clone();
                    smc.seed = crate::rng::derive_seed(seed, "oracle-smc", 0);
                    smc_best_subset(&problem, spec.k, &smc)?.model
                }
                SolverKind::Exhaustive => best.clone(),
                other => return Err(Error::NotApplicable(format!("{other} has no fixed-k fit"))),
            };
            Ok(OracleRow {
                seed,
                solver,
                optimum_sse: best.sse,
                sse: model.sse,
                matched: model.sse <= best.sse * (1.0 + MATCH_TOLERANCE),
                support: model.support,
            })
        })
        .collect()
}

/// CSV with one row per (seed, solver).
pub fn oracle_csv(rows: &[OracleRow]) -> String {
    let mut out = String::from("seed,solver,optimum_sse,sse,relative_gap,matched,support\n");
    for r in rows {
        let support: Vec<String> = r.support.iter().map(|j| j.to_string()).collect();
        out.push_str(&format!(
            "{},{},{:.10},{:.10},{:.3e},{},{}\n",
            r.seed,
            r.solver.name(),
            r.optimum_sse,
            r.sse,
            r.relative_gap(),
            r.matched,
            support.join(" ")
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_has_requested_shape() {
        let (p, truth) = oracle_instance(&OracleSpec::default(), 3).unwrap();
        assert_eq!((p.n_obs(), p.n_features()), (60, 15));
        assert_eq!(truth.len(), 3);
        assert_eq!(oracle_instance(&OracleSpec::default(), 3).unwrap().1, truth);
    }

    #[test]
    fn exhaustive_always_matches_itself() {
        let rows = oracle_check(&OracleSpec::default(), 1, &[SolverKind::Exhaustive, SolverKind::Fs], &SolverSettings::new(3)).unwrap();
        assert!(rows[0].matched);
        assert!(rows[1].sse >= rows[0].optimum_sse * (1.0 - 1e-12));
        assert_eq!(oracle_csv(&rows).lines().count(), 3);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(OracleSpec { k: 0, ..OracleSpec::default() }.validate().is_err());
        assert!(OracleSpec { p: 40, ..OracleSpec::default() }.validate().is_err());
        let rows = oracle_check(&OracleSpec::default(), 1, &[SolverKind::AdaLasso], &SolverSettings::new(3));
        assert!(matches!(rows, Err(Error::NotApplicable(_))));
    }
}
