//! Simulated designs for comparing the solvers, evaluation criteria and the
//! replicated study driver.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::factor::{extract_factors, select_fa_criterion, select_fa_fcv, FaSelection, FaSpec};
use crate::model::{SolverKind, SubsetModel};
use crate::paths::{SolverFitter, SolverSettings};
use crate::problem::{ColumnMeta, RegressionProblem, Standardizer};
use crate::rng::{derive_seed, stream};
use crate::selection::{select, Criterion, SelectionPlan};

/// Lags stacked into the variable-selection design of the factor study.
pub const FA_STUDY_LAGS: usize = 5;
pub const FA_STUDY_GROUP_SIZE: usize = 30;
/// `(phi, innovation variance of f, idiosyncratic variance)` per group.
pub const FA_STUDY_GROUPS: [(f64, f64, f64); 4] = [(0.7, 0.357, 0.3), (0.7, 0.153, 0.7), (0.3, 0.637, 0.3), (0.3, 0.273, 0.7)];
pub const FA_STUDY_T: usize = 300;
pub const FA_STUDY_TEST: usize = 50;
pub const FA_STUDY_VALIDATION: usize = 50;
pub const FA_MAX_FACTORS: usize = 5;
pub const FA_MAX_LAGS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mechanism {
    FromPredictors,
    FromFactors,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DgpKind {
    /// 900 predictors in three equicorrelated groups, `T = 200`.
    Setting1 { r2: f64 },
    /// 2000 independent predictors, five coefficients of one.
    Setting2 { t: usize },
    /// 2000 predictors in four equicorrelated groups, two signals per group.
    Setting3 { t: usize },
    FaVsVs(Mechanism),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub seed: u64,
    pub test_size: usize,
}

/// An equicorrelated block of predictors and the coefficients placed on its
/// leading columns.
#[derive(Debug, Clone, PartialEq)]
struct Block {
    size: usize,
    rho: f64,
    coefs: Vec<f64>,
}

impl DgpSpec {
    pub fn new(kind: DgpKind, seed: u64) -> Self {
        let test_size = match kind {
            DgpKind::FaVsVs(_) => FA_STUDY_TEST,
            _ => 100,
        };
        Self { kind, seed, test_size }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::InvalidInput(reason.into()));
        match self.kind {
            DgpKind::Setting1 { r2 } if !(r2 > 0.0 && r2 < 1.0) => return bad("theoretical R^2 must lie in (0, 1)"),
            DgpKind::Setting2 { t } | DgpKind::Setting3 { t } if t < 10 => return bad("T must be at least 10"),
            DgpKind::FaVsVs(_) if self.test_size + FA_STUDY_VALIDATION + 30 > FA_STUDY_T => {
                return bad("test block leaves too few training rows")
            }
            _ => {}
        }
        if self.test_size == 0 {
            return bad("test size must be positive");
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        match self.kind {
            DgpKind::Setting1 { r2 } => format!("setting1-r2-{r2}"),
            DgpKind::Setting2 { t } => format!("setting2-t{t}"),
            DgpKind::Setting3 { t } => format!("setting3-t{t}"),
            DgpKind::FaVsVs(Mechanism::FromPredictors) => "favsvs-predictors".into(),
            DgpKind::FaVsVs(Mechanism::FromFactors) => "favsvs-factors".into(),
        }
    }

    fn blocks(&self) -> Option<(Vec<Block>, f64)> {
        let b = |size, rho, coefs: &[f64]| Block { size, rho, coefs: coefs.to_vec() };
        match self.kind {
            DgpKind::Setting1 { r2 } => {
                let c = [0.1, 0.4, 0.7, 1.0];
                Some((vec![b(300, 0.1, &c), b(300, 0.4, &c), b(300, 0.8, &c)], r2))
            }
            DgpKind::Setting2 { .. } => Some((vec![b(2000, 0.0, &[1.0; 5])], 0.8)),
            DgpKind::Setting3 { .. } => {
                let c = [1.0, 1.0];
                Some((vec![b(500, 0.1, &c), b(500, 0.4, &c), b(500, 0.7, &c), b(500, 0.9, &c)], 0.8))
            }
            DgpKind::FaVsVs(_) => None,
        }
    }

    pub fn n_train(&self) -> usize {
        match self.kind {
            DgpKind::Setting1 { .. } => 200,
            DgpKind::Setting2 { t } | DgpKind::Setting3 { t } => t,
            DgpKind::FaVsVs(_) => FA_STUDY_T - self.test_size,
        }
    }

    pub fn n_features(&self) -> usize {
        match self.blocks() {
            Some((blocks, _)) => blocks.iter().map(|b| b.size).sum(),
            None => FA_STUDY_GROUPS.len() * FA_STUDY_GROUP_SIZE * (FA_STUDY_LAGS + 1),
        }
    }

    /// Number of nonzero predictor coefficients; zero when the response is
    /// generated from latent factors.
    pub fn n_true(&self) -> usize {
        match self.kind {
            DgpKind::FaVsVs(Mechanism::FromFactors) => 0,
            DgpKind::FaVsVs(Mechanism::FromPredictors) => 16,
            _ => self.blocks().map(|(b, _)| b.iter().map(|b| b.coefs.len()).sum()).unwrap_or(0),
        }
    }

    pub fn theoretical_r2(&self) -> f64 {
        self.blocks().map(|(_, r2)| r2).unwrap_or(0.8)
    }

    /// Largest subset size the solvers search over.
    pub fn default_k_max(&self) -> usize {
        match self.kind {
            DgpKind::FaVsVs(_) => 25,
            _ => (2 * self.n_true()).max(20),
        }
    }

    pub fn default_plan(&self) -> SelectionPlan {
        match self.kind {
            DgpKind::FaVsVs(_) => SelectionPlan::ForwardCv { validation: FA_STUDY_VALIDATION },
            _ => SelectionPlan::KFold { folds: 5 },
        }
    }

    /// Noise variance giving the theoretical R².
    pub fn noise_variance(&self) -> f64 {
        let r2 = self.theoretical_r2();
        signal_variance(self) * (1.0 - r2) / r2
    }
}

/// Population variance of the noiseless response.
pub fn signal_variance(spec: &DgpSpec) -> f64 {
    if let Some((blocks, _)) = spec.blocks() {
        // Var(sum b_j x_j) over an equicorrelated block is (1 - rho) sum b^2 + rho (sum b)^2.
        return blocks
            .iter()
            .map(|b| {
                let s: f64 = b.coefs.iter().sum();
                let s2: f64 = b.coefs.iter().map(|c| c * c).sum();
                (1.0 - b.rho) * s2 + b.rho * s * s
            })
            .sum();
    }
    let mechanism = match spec.kind {
        DgpKind::FaVsVs(m) => m,
        _ => unreachable!(),
    };
    FA_STUDY_GROUPS
        .iter()
        .map(|&(phi, d1, d2)| {
            let v = d1 / (1.0 - phi * phi);
            match mechanism {
                Mechanism::FromFactors => v * (0.8f64.powi(2) + 0.4f64.powi(2) + 2.0 * 0.8 * 0.4 * phi),
                Mechanism::FromPredictors => {
                    // Terms (j, lag, coef); cov = v phi^|l - l'| + d2 [same column and lag].
                    let terms = [(1, 0, 0.8), (2, 0, 0.4), (1, 1, 0.8), (2, 1, 0.4)];
                    let mut var = 0.0;
                    for &(j, l, a) in &terms {
                        for &(j2, l2, b) in &terms {
                            let lag = (l as i32 - l2 as i32).unsigned_abs() as i32;
                            let idio = if j == j2 && l == l2 { d2 } else { 0.0 };
                            var += a * b * (v * phi.powi(lag) + idio);
                        }
                    }
                    var
                }
            }
        })
        .sum()
}

/// Predictor panel of the factor study, kept for the factor-augmented fit.
#[derive(Debug, Clone)]
pub struct FactorPanel {
    /// All rows including the lag pre-sample, 120 columns at lag 0.
    pub z: DMatrix<f64>,
    /// Response aligned with `z`; NaN on pre-sample rows.
    pub y: Vec<f64>,
    /// Latent factors aligned with `z`.
    pub latent: DMatrix<f64>,
    /// First test row of `z`.
    pub test_start: usize,
}

#[derive(Debug, Clone)]
pub struct SimData {
    /// Standardized training problem.
    pub train: RegressionProblem,
    /// Test rows on the training scale.
    pub test: RegressionProblem,
    /// Raw-scale coefficients of the data-generating model, length p.
    pub truth: Vec<f64>,
    pub noise_variance: f64,
    /// Columns of the true model, standardized like the training problem.
    pub oracle_train: RegressionProblem,
    pub oracle_test: RegressionProblem,
    pub panel: Option<FactorPanel>,
    pub standardizer: Standardizer,
}

impl SimData {
    pub fn truth_support(&self) -> Vec<usize> {
        self.truth.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, _)| j).collect()
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn split(
    x: DMatrix<f64>,
    y: DVector<f64>,
    n_train: usize,
    meta: Option<Vec<ColumnMeta>>,
) -> Result<(RegressionProblem, RegressionProblem, Standardizer)> {
    let t = x.nrows();
    let p = x.ncols();
    let xt = x.rows(0, n_train).into_owned();
    let yt = y.rows(0, n_train).into_owned();
    let (train, st) = RegressionProblem::standardized(xt, yt, meta.clone())?;
    let xs = st.apply(&x.rows(n_train, t - n_train).into_owned());
    let test = RegressionProblem::new(xs, y.rows(n_train, t - n_train).into_owned(), meta)?;
    debug_assert_eq!(test.n_features(), p);
    Ok((train, test, st))
}

/// Draws one data set. Deterministic in `spec`.
pub fn generate(spec: &DgpSpec) -> Result<SimData> {
    spec.validate()?;
    let mut rng = stream(spec.seed, "dgp", 0);
    let sigma = spec.noise_variance().sqrt();
    let n_train = spec.n_train();
    match spec.blocks() {
        Some((blocks, _)) => {
            let n = n_train + spec.test_size;
            let p = spec.n_features();
            let mut x = DMatrix::zeros(n, p);
            let mut truth = vec![0.0; p];
            let mut start = 0;
            for b in &blocks {
                let (a, c) = (b.rho.sqrt(), (1.0 - b.rho).sqrt());
                for i in 0..n {
                    let g = normal(&mut rng);
                    for j in start..start + b.size {
                        x[(i, j)] = a * g + c * normal(&mut rng);
                    }
                }
                truth[start..start + b.coefs.len()].copy_from_slice(&b.coefs);
                start += b.size;
            }
            let y = DVector::from_fn(n, |i, _| {
                let s: f64 = truth.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, b)| b * x[(i, j)]).sum();
                s + sigma * normal(&mut rng)
            });
            let support: Vec<usize> = (0..p).filter(|&j| truth[j] != 0.0).collect();
            let xo = DMatrix::from_fn(n, support.len(), |i, c| x[(i, support[c])]);
            let (oracle_train, oracle_test, _) = split(xo, y.clone(), n_train, None)?;
            let (train, test, standardizer) = split(x, y, n_train, None)?;
            Ok(SimData { train, test, truth, noise_variance: sigma * sigma, oracle_train, oracle_test, panel: None, standardizer })
        }
        None => generate_factor_study(spec, &mut rng, sigma),
    }
}

fn generate_factor_study<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R, sigma: f64) -> Result<SimData> {
    let mechanism = match spec.kind {
        DgpKind::FaVsVs(m) => m,
        _ => unreachable!(),
    };
    let groups = FA_STUDY_GROUPS.len();
    let per = FA_STUDY_GROUP_SIZE;
    let n_rows = FA_STUDY_T + FA_STUDY_LAGS;
    let mut latent = DMatrix::zeros(n_rows, groups);
    for (g, &(phi, d1, _)) in FA_STUDY_GROUPS.iter().enumerate() {
        let sd = d1.sqrt();
        // Stationary start.
        let mut f = sd / (1.0 - phi * phi).sqrt() * normal(rng);
        for t in 0..n_rows {
            if t > 0 {
                f = phi * f + sd * normal(rng);
            }
            latent[(t, g)] = f;
        }
    }
    let mut z = DMatrix::zeros(n_rows, groups * per);
    for (g, &(_, _, d2)) in FA_STUDY_GROUPS.iter().enumerate() {
        let sd = d2.sqrt();
        for t in 0..n_rows {
            for j in 0..per {
                z[(t, g * per + j)] = latent[(t, g)] + sd * normal(rng);
            }
        }
    }
    let lags = FA_STUDY_LAGS + 1;
    let col = |g: usize, j: usize, lag: usize| (g * per + j) * lags + lag;
    let p = groups * per * lags;
    let mut truth = vec![0.0; p];
    if mechanism == Mechanism::FromPredictors {
        for g in 0..groups {
            truth[col(g, 0, 0)] = 0.8;
            truth[col(g, 1, 0)] = 0.4;
            truth[col(g, 0, 1)] = 0.8;
            truth[col(g, 1, 1)] = 0.4;
        }
    }
    let mut y = vec![f64::NAN; n_rows];
    for (t, yt) in y.iter_mut().enumerate().skip(FA_STUDY_LAGS) {
        let signal: f64 = match mechanism {
            Mechanism::FromPredictors => (0..groups)
                .map(|g| {
                    0.8 * z[(t, g * per)] + 0.4 * z[(t, g * per + 1)] + 0.8 * z[(t - 1, g * per)] + 0.4 * z[(t - 1, g * per + 1)]
                })
                .sum(),
            Mechanism::FromFactors => (0..groups).map(|g| 0.8 * latent[(t, g)] + 0.4 * latent[(t - 1, g)]).sum(),
        };
        *yt = signal + sigma * normal(rng);
    }
    let rows = FA_STUDY_T;
    let x = DMatrix::from_fn(rows, p, |i, c| {
        let lag = c % lags;
        let v = c / lags;
        z[(i + FA_STUDY_LAGS - lag, v)]
    });
    let meta: Vec<ColumnMeta> = (0..p)
        .map(|c| {
            let v = c / lags;
            ColumnMeta::new(format!("g{}x{}", v / per + 1, v % per + 1), c % lags)
        })
        .collect();
    let yv = DVector::from_iterator(rows, y[FA_STUDY_LAGS..].iter().copied());
    let n_train = spec.n_train();
    let (train, test, standardizer) = split(x, yv.clone(), n_train, Some(meta))?;
    let xo = match mechanism {
        Mechanism::FromPredictors => {
            let support: Vec<usize> = (0..p).filter(|&j| truth[j] != 0.0).collect();
            DMatrix::from_fn(rows, support.len(), |i, c| {
                let lag = support[c] % lags;
                z[(i + FA_STUDY_LAGS - lag, support[c] / lags)]
            })
        }
        Mechanism::FromFactors => {
            DMatrix::from_fn(rows, 2 * groups, |i, c| latent[(i + FA_STUDY_LAGS - c / groups, c % groups)])
        }
    };
    let (oracle_train, oracle_test, _) = split(xo, yv, n_train, None)?;
    let panel = FactorPanel { z, y, latent, test_start: FA_STUDY_LAGS + n_train };
    Ok(SimData {
        train,
        test,
        truth,
        noise_variance: sigma * sigma,
        oracle_train,
        oracle_test,
        panel: Some(panel),
        standardizer,
    })
}

/// Per-replicate evaluation of one fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// NaN when the true model has no predictors.
    pub precision: f64,
    pub recall: f64,
    pub dc: f64,
    pub mspe: f64,
    /// In-sample R² of the selected model.
    pub r2: f64,
    pub size: usize,
    pub wall_time_minutes: f64,
    /// True predictors that were selected.
    pub per_predictor_hits: BTreeMap<usize, usize>,
}

/// Confusion-table scores. With an empty true support the scores are NaN;
/// an empty selection against a nonempty truth scores zero.
pub fn confusion_scores(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    if tp + fn_ == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let (tp, fp, fn_) = (tp as f64, fp as f64, fn_ as f64);
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = tp / (tp + fn_);
    let dc = 2.0 * tp / (2.0 * tp + fp + fn_);
    (precision, recall, dc)
}

pub fn evaluate(truth_support: &[usize], model: &SubsetModel, test: &RegressionProblem) -> EvalReport {
    let tp = model.support.iter().filter(|j| truth_support.contains(j)).count();
    let fp = model.size() - tp;
    let fn_ = truth_support.len() - tp;
    let (precision, recall, dc) = confusion_scores(tp, fp, fn_);
    let per_predictor_hits =
        truth_support.iter().map(|&j| (j, usize::from(model.support.contains(&j)))).collect();
    EvalReport {
        precision,
        recall,
        dc,
        mspe: model.mspe(test),
        r2: model.r_squared,
        size: model.size(),
        wall_time_minutes: 0.0,
        per_predictor_hits,
    }
}

/// Methods compared in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// OLS on the true model's columns.
    Truth,
    Solver(SolverKind),
    FaBic,
    FaFcv,
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Truth => "true".into(),
            Method::Solver(k) => k.name().into(),
            Method::FaBic => "FA_BIC".into(),
            Method::FaFcv => "FA_FCV".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "true" | "truth" => Ok(Method::Truth),
            "fa_bic" | "fa-bic" => Ok(Method::FaBic),
            "fa_fcv" | "fa-fcv" => Ok(Method::FaFcv),
            other => other.parse::<SolverKind>().map(Method::Solver),
        }
    }
}

/// Factor-augmented fit on the factor-study panel, scored on the test block.
pub fn evaluate_factor_model(data: &SimData, criterion: Option<Criterion>) -> Result<(EvalReport, FaSelection)> {
    let panel = data
        .panel
        .as_ref()
        .ok_or_else(|| Error::NotApplicable("factor model needs the factor-study panel".into()))?;
    let (n_rows, n) = panel.z.shape();
    let train_z = panel.z.rows(0, panel.test_start).into_owned();
    let st = Standardizer::fit(&train_z)?;
    let fit = extract_factors(&st.apply(&train_z), FA_MAX_FACTORS, &[])?;
    let factors = fit.project(&st.apply(&panel.z));
    debug_assert_eq!(factors.nrows(), n_rows);
    debug_assert!(n >= FA_MAX_FACTORS);
    let grid = FaSpec::grid(FA_MAX_FACTORS, &[0], FA_MAX_LAGS);
    let first = FA_STUDY_LAGS;
    let train: Vec<usize> = (first..panel.test_start).collect();
    let sel = match criterion {
        Some(c) => select_fa_criterion(&grid, c, &panel.y, &panel.y, &factors, &train)?,
        None => {
            let cut = panel.test_start - FA_STUDY_VALIDATION;
            let fit_rows: Vec<usize> = (first..cut).collect();
            let val_rows: Vec<usize> = (cut..panel.test_start).collect();
            select_fa_fcv(&grid, &panel.y, &panel.y, &factors, &fit_rows, &val_rows)?
        }
    };
    let mut sse = 0.0;
    let mut count = 0;
    for t in panel.test_start..n_rows {
        let pred = sel.model.predict(&panel.y, &factors, t).ok_or_else(|| Error::InvalidInput("missing factor lags".into()))?;
        sse += (panel.y[t] - pred).powi(2);
        count += 1;
    }
    let ys: Vec<f64> = train.iter().map(|&t| panel.y[t]).filter(|v| v.is_finite()).collect();
    let ym = ys.iter().sum::<f64>() / ys.len() as f64;
    let sst_rows: f64 = train
        .iter()
        .filter(|&&t| t >= sel.model.spec.first_origin())
        .map(|&t| (panel.y[t] - ym).powi(2))
        .sum();
    let r2 = crate::model::r_squared(sel.model.sse, sst_rows);
    let report = EvalReport {
        precision: f64::NAN,
        recall: f64::NAN,
        dc: f64::NAN,
        mspe: sse / count as f64,
        r2,
        size: sel.model.spec.d * sel.model.spec.m,
        wall_time_minutes: 0.0,
        per_predictor_hits: BTreeMap::new(),
    };
    Ok((report, sel))
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub spec: DgpSpec,
    pub methods: Vec<Method>,
    pub repetitions: usize,
    pub plan: SelectionPlan,
    pub settings: SolverSettings,
}

impl StudyConfig {
    pub fn new(spec: DgpSpec, methods: Vec<Method>, repetitions: usize) -> Self {
        Self { spec, methods, repetitions, plan: spec.default_plan(), settings: SolverSettings::new(spec.default_k_max()) }
    }
}

/// Seeds used by replicate `rep` of a study with master seed `master`.
pub fn replicate_spec(spec: &DgpSpec, master: u64, rep: usize) -> DgpSpec {
    DgpSpec { seed: derive_seed(master, "sim-data", rep as u64), ..*spec }
}

/// Fits and evaluates one method on one replicate.
pub fn run_method(config: &StudyConfig, data: &SimData, method: Method, rep: usize) -> Result<EvalReport> {
    let start = Instant::now();
    let master = config.spec.seed;
    let support = data.truth_support();
    let mut report = match method {
        Method::Truth => {
            let cols: Vec<usize> = (0..data.oracle_train.n_features()).collect();
            let m = SubsetModel::refit(&data.oracle_train, &cols, SolverKind::Truth)?;
            let mut r = evaluate(&[], &m, &data.oracle_test);
            if !support.is_empty() {
                let (p, rc, dc) = confusion_scores(support.len(), 0, 0);
                r.precision = p;
                r.recall = rc;
                r.dc = dc;
                r.per_predictor_hits = support.iter().map(|&j| (j, 1)).collect();
            }
            r.size = cols.len();
            r
        }
        Method::Solver(kind) => {
            let mut settings = config.settings.clone();
            settings.smc.seed = derive_seed(master, "smc", rep as u64);
            let fitter = SolverFitter::new(kind, settings, &data.train)?;
            let mut rng = stream(master, &format!("select-{}", kind.name()), rep as u64);
            let sel = select(&data.train, &fitter, config.plan, &mut rng)?;
            evaluate(&support, &sel.model, &data.test)
        }
        Method::FaBic => evaluate_factor_model(data, Some(Criterion::Bic))?.0,
        Method::FaFcv => evaluate_factor_model(data, None)?.0,
    };
    report.wall_time_minutes = start.elapsed().as_secs_f64() / 60.0;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    /// Mean and standard error of the finite values.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
        let n = v.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN, n };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0) / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, se, n }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub completed: usize,
    pub failures: usize,
    pub mspe: MeanSe,
    pub r2: MeanSe,
    pub precision: MeanSe,
    pub recall: MeanSe,
    pub dc: MeanSe,
    pub size: MeanSe,
    pub minutes: MeanSe,
    pub hits: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub name: String,
    pub repetitions: usize,
    pub summaries: Vec<MethodSummary>,
    /// Per-replicate outcomes, `[rep][method]`.
    pub replicates: Vec<Vec<std::result::Result<EvalReport, String>>>,
}

impl StudyReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn is_empty(&self) -> bool {
        self.summaries.is_empty()
    }

    /// One row per method with mean and standard error of every criterion.
    /// Wall times are left out so reruns produce identical files; see
    /// [`StudyReport::timing_csv`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,completed,failures");
        for c in ["mspe", "r2", "precision", "recall", "dc", "size"] {
            let _ = write!(out, ",{c}_mean,{c}_se");
        }
        out.push('\n');
        for s in &self.summaries {
            let _ = write!(out, "{},{},{}", s.method.name(), s.completed, s.failures);
            for m in [&s.mspe, &s.r2, &s.precision, &s.recall, &s.dc, &s.size] {
                let _ = write!(out, ",{},{}", fmt_num(m.mean), fmt_num(m.se));
            }
            out.push('\n');
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("method,minutes_mean,minutes_se\n");
        for s in &self.summaries {
            let _ = writeln!(out, "{},{},{}", s.method.name(), fmt_num(s.minutes.mean), fmt_num(s.minutes.se));
        }
        out
    }

    /// Criteria as rows, methods as columns, standard errors in parentheses.
    pub fn to_markdown(&self) -> String {
        let mut out = format!("### {} ({} repetitions)\n\n|", self.name, self.repetitions);
        for s in &self.summaries {
            let _ = write!(out, " | {}", s.method.name());
        }
        out.push_str(" |\n|---");
        for _ in &self.summaries {
            out.push_str("|---");
        }
        out.push_str("|\n");
        let rows: [(&str, fn(&MethodSummary) -> MeanSe); 6] = [
            ("MSPE", |s| s.mspe),
            ("R2", |s| s.r2),
            ("DC", |s| s.dc),
            ("Precision", |s| s.precision),
            ("Recall", |s| s.recall),
            ("Time (min)", |s| s.minutes),
        ];
        for (label, get) in rows {
            let _ = write!(out, "| {label}");
            for s in &self.summaries {
                let m = get(s);
                if m.mean.is_finite() {
                    let _ = write!(out, " | {:.2} ({:.2})", m.mean, m.se);
                } else {
                    out.push_str(" | --");
                }
            }
            out.push_str(" |\n");
        }
        out
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        "NA".into()
    }
}

fn summarize(method: Method, outcomes: &[&std::result::Result<EvalReport, String>]) -> MethodSummary {
    let ok: Vec<&EvalReport> = outcomes.iter().filter_map(|r| r.as_ref().ok()).collect();
    let stat = |f: fn(&EvalReport) -> f64| MeanSe::of(ok.iter().map(|r| f(r)));
    let mut hits = BTreeMap::new();
    for r in &ok {
        for (&j, &h) in &r.per_predictor_hits {
            *hits.entry(j).or_insert(0) += h;
        }
    }
    MethodSummary {
        method,
        completed: ok.len(),
        failures: outcomes.len() - ok.len(),
        mspe: stat(|r| r.mspe),
        r2: stat(|r| r.r2),
        precision: stat(|r| r.precision),
        recall: stat(|r| r.recall),
        dc: stat(|r| r.dc),
        size: stat(|r| r.size as f64),
        minutes: stat(|r| r.wall_time_minutes),
        hits,
    }
}

/// Runs every method on `repetitions` fresh data sets. Failures are logged,
/// counted and left out of the means.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    config.spec.validate()?;
    let name = config.spec.name();
    if config.repetitions == 0 || config.methods.is_empty() {
        return Ok(StudyReport { name, repetitions: 0, summaries: Vec::new(), replicates: Vec::new() });
    }
    let replicates: Vec<Vec<std::result::Result<EvalReport, String>>> = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| {
            let spec = replicate_spec(&config.spec, config.spec.seed, rep);
            match generate(&spec) {
                Ok(data) => config
                    .methods
                    .iter()
                    .map(|&m| {
                        run_method(config, &data, m, rep).map_err(|e| {
                            log::warn!("{name} rep {rep}: {} failed: {e}", m.name());
                            e.to_string()
                        })
                    })
                    .collect(),
                Err(e) => vec![Err(e.to_string()); config.methods.len()],
            }
        })
        .collect();
    let summaries = config
        .methods
        .iter()
        .enumerate()
        .map(|(i, &m)| summarize(m, &replicates.iter().map(|r| &r[i]).collect::<Vec<_>>()))
        .collect();
    Ok(StudyReport { name, repetitions: config.repetitions, summaries, replicates })
}
