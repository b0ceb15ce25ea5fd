//! Candidate-model paths for every solver, in the shape the selection
//! routines consume: candidate 0 is the intercept-only model, candidate k the
//! solver's k-subset (for adaLASSO, candidate i is the i-th grid penalty).

use crate::error::{Error, Result};
use crate::gds::{cosamp, htp, iht, subspace_pursuit, GdsConfig};
use crate::greedy::{backward_eliminate, forward_select};
use crate::l1::{adaptive_weights, default_grid, lasso_path, ridge_cv, LassoConfig, RIDGE_FOLDS, RIDGE_GRID_SIZE};
use crate::model::{SolverKind, SubsetModel};
use crate::problem::RegressionProblem;
use crate::selection::PathFitter;
use crate::smc::{smc_path, SmcConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub k_max: usize,
    /// Template for the GDS solvers; `k` is overwritten per candidate.
    pub gds: GdsConfig,
    pub smc: SmcConfig,
    pub lasso: LassoConfig,
}

impl SolverSettings {
    pub fn new(k_max: usize) -> Self {
        Self { k_max, gds: GdsConfig::new(1), smc: SmcConfig::default(), lasso: LassoConfig::default() }
    }
}

/// Fits one solver's candidate path on arbitrary training problems.
///
/// adaLASSO penalty weights and the λ grid are computed once from the problem
/// passed to [`SolverFitter::new`] and reused on every training subset.
#[derive(Debug, Clone)]
pub struct SolverFitter {
    pub kind: SolverKind,
    pub settings: SolverSettings,
    ada: Option<(Vec<f64>, Vec<f64>)>,
}

impl SolverFitter {
    pub fn new(kind: SolverKind, settings: SolverSettings, full: &RegressionProblem) -> Result<Self> {
        let ada = if kind == SolverKind::AdaLasso {
            let ridge = ridge_cv(full, RIDGE_FOLDS, RIDGE_GRID_SIZE)?;
            let weights = adaptive_weights(&ridge.beta);
            let grid = default_grid(full, &weights, &settings.lasso);
            Some((weights, grid))
        } else {
            None
        };
        if kind != SolverKind::AdaLasso && settings.k_max == 0 {
            return Err(Error::InvalidK { k: 0, reason: "k_max must be at least 1".into() });
        }
        Ok(Self { kind, settings, ada })
    }

    /// Penalty weights and grid used by adaLASSO.
    pub fn adaptive(&self) -> Option<(&[f64], &[f64])> {
        self.ada.as_ref().map(|(w, g)| (w.as_slice(), g.as_slice()))
    }
}

fn per_k<F>(problem: &RegressionProblem, k_max: usize, kind: SolverKind, mut fit: F) -> Vec<Option<SubsetModel>>
where
    F: FnMut(usize) -> Result<SubsetModel>,
{
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(SubsetModel::refit(problem, &[], kind).ok());
    for k in 1..=k_max {
        match fit(k) {
            Ok(m) => out.push(Some(m)),
            Err(e) => {
                log::debug!("{kind} failed at k = {k}: {e}");
                out.push(None);
            }
        }
    }
    out
}

impl PathFitter for SolverFitter {
    fn n_candidates(&self) -> usize {
        match &self.ada {
            Some((_, grid)) => grid.len(),
            None => self.settings.k_max + 1,
        }
    }

    fn fit_path(&self, problem: &RegressionProblem) -> Result<Vec<Option<SubsetModel>>> {
        let k_max = self.settings.k_max.min(problem.n_obs().saturating_sub(2)).min(problem.n_features());
        let nc = self.n_candidates();
        let mut out = match self.kind {
            SolverKind::Fs => {
                let path = forward_select(problem, k_max)?;
                let mut out = vec![SubsetModel::refit(problem, &[], SolverKind::Fs).ok()];
                out.extend(path.models.into_iter().map(Some));
                out
            }
            SolverKind::Be => {
                let path = backward_eliminate(problem, 1)?;
                let mut out = vec![SubsetModel::refit(problem, &[], SolverKind::Be).ok()];
                for k in 1..=k_max {
                    out.push(path.model_of_size(k).cloned());
                }
                out
            }
            SolverKind::Iht | SolverKind::Htp | SolverKind::Cosamp | SolverKind::Sp => {
                let kind = self.kind;
                per_k(problem, k_max, kind, |k| {
                    let cfg = GdsConfig { k, ..self.settings.gds.clone() };
                    let (m, _) = match kind {
                        SolverKind::Iht => iht(problem, &cfg)?,
                        SolverKind::Htp => htp(problem, &cfg)?,
                        SolverKind::Cosamp => cosamp(problem, &cfg)?,
                        _ => subspace_pursuit(problem, &cfg)?,
                    };
                    Ok(m)
                })
            }
            SolverKind::Smc => {
                let runs = smc_path(problem, k_max, &self.settings.smc)?;
                let mut out = vec![SubsetModel::refit(problem, &[], SolverKind::Smc).ok()];
                out.extend(runs.into_iter().map(|r| Some(r.model)));
                out
            }
            SolverKind::AdaLasso => {
                let (weights, grid) = self.ada.as_ref().expect("prepared in new");
                let path = lasso_path(problem, grid, weights, &self.settings.lasso)?;
                path.fits.iter().map(|f| Some(f.to_model(problem, SolverKind::AdaLasso))).collect()
            }
            SolverKind::Exhaustive => per_k(problem, k_max, SolverKind::Exhaustive, |k| {
                crate::exhaustive::best_subset(problem, k)
            }),
            SolverKind::Truth => {
                return Err(Error::InvalidInput("the true model has no candidate path".into()));
            }
        };
        out.resize(nc, None);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn problem() -> RegressionProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(60, 20, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(60, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[(i, 1)] + x[(i, 5)] + e
        });
        RegressionProblem::standardized(x, y, None).unwrap().0
    }

    #[test]
    fn every_solver_yields_aligned_paths() {
        let p = problem();
        let mut settings = SolverSettings::new(4);
        settings.smc.particles = 100;
        for kind in [SolverKind::Fs, SolverKind::Be, SolverKind::Iht, SolverKind::Htp, SolverKind::Cosamp, SolverKind::Sp, SolverKind::Smc] {
            let f = SolverFitter::new(kind, settings.clone(), &p).unwrap();
            let path = f.fit_path(&p).unwrap();
            assert_eq!(path.len(), 5);
            for (k, m) in path.iter().enumerate() {
                let m = m.as_ref().unwrap();
                assert_eq!(m.size(), k, "{kind}");
                assert_eq!(m.solver, kind);
            }
        }
        let f = SolverFitter::new(SolverKind::AdaLasso, settings, &p).unwrap();
        let path = f.fit_path(&p).unwrap();
        assert_eq!(path.len(), f.n_candidates());
        assert_eq!(path[0].as_ref().unwrap().size(), 0);
    }
}
