//! Rolling-window real-time forecasting with the AR benchmark, MSPE ratios
//! and predictor-frequency tables.
//!
//! For a target date `d` and horizon `h` the forecast origin is `t = d - h`.
//! Everything fitted for that origin reads only data dated in
//! `[t - window + 1, t]`, and a training pair `(X_s, y^h_{s+h})` is used only
//! when `s + h <= t`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::factor::{extract_factors, select_fa_fcv, standardize_observed, FaSpec, MIN_OBSERVED_SHARE};
use crate::fredmd::{build_dataset, build_targets, DatasetSpec, ForecastDataset, FredmdTable, Month, LAG_DEPTH};
use crate::model::SolverKind;
use crate::paths::{SolverFitter, SolverSettings};
use crate::problem::{ColumnMeta, RegressionProblem};
use crate::rng::derive_seed;
use crate::selection::forward_cv_select;

/// Rows lost to the deepest differencing transform at the start of a window.
pub const MAX_DIFF_ORDER: usize = 2;
/// Methods within this factor of the best ratio are marked best.
pub const BEST_RATIO_TOLERANCE: f64 = 1.05;
/// Predictors selected fewer times are left out of frequency tables.
pub const FREQUENCY_THRESHOLD: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HarnessMethod {
    Ar,
    Fa,
    Solver(SolverKind),
}

impl HarnessMethod {
    pub fn name(&self) -> String {
        match self {
            HarnessMethod::Ar => "AR".into(),
            HarnessMethod::Fa => "FA".into(),
            HarnessMethod::Solver(k) => k.name().into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ar" => Ok(HarnessMethod::Ar),
            "fa" => Ok(HarnessMethod::Fa),
            other => match other.parse::<SolverKind>()? {
                SolverKind::Truth | SolverKind::Exhaustive | SolverKind::Be => {
                    Err(Error::InvalidInput(format!("{other} is not a rolling-forecast method")))
                }
                k => Ok(HarnessMethod::Solver(k)),
            },
        }
    }

    /// The methods compared in the paper's forecasting table.
    pub fn default_set() -> Vec<HarnessMethod> {
        let mut v = vec![HarnessMethod::Ar, HarnessMethod::Fa];
        v.extend(
            [SolverKind::Fs, SolverKind::Smc, SolverKind::AdaLasso, SolverKind::Iht, SolverKind::Htp]
                .into_iter()
                .map(HarnessMethod::Solver),
        );
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollingConfig {
    pub window: usize,
    pub validation: usize,
    /// First and last target dates of the test span.
    pub first_target: Month,
    pub last_target: Month,
    pub horizons: Vec<usize>,
    pub methods: Vec<HarnessMethod>,
    pub ar_max_order: usize,
    pub fa_max_factors: usize,
    pub fa_max_ar: usize,
    pub fa_max_lags: usize,
    pub solvers: SolverSettings,
    pub seed: u64,
}

impl Default for RollingConfig {
    fn default() -> Self {
        let mut solvers = SolverSettings::new(20);
        solvers.smc.particles = 300;
        Self {
            window: 240,
            validation: 48,
            first_target: Month { year: 2015, month: 1 },
            last_target: Month { year: 2018, month: 12 },
            horizons: vec![1, 3, 6, 12],
            methods: HarnessMethod::default_set(),
            ar_max_order: 6,
            fa_max_factors: 5,
            fa_max_ar: 6,
            fa_max_lags: 6,
            solvers,
            seed: 0,
        }
    }
}

impl RollingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::ConfigInvalid { field: field.into(), reason });
        if self.horizons.is_empty() {
            return bad("horizons", "need at least one horizon".into());
        }
        for &h in &self.horizons {
            if h == 0 {
                return bad("horizons", "horizons must be positive".into());
            }
            if self.window <= self.validation + h + 30 + LAG_DEPTH + MAX_DIFF_ORDER {
                return bad("window", format!("window {} too short for validation {} and h = {h}", self.window, self.validation));
            }
        }
        if self.last_target < self.first_target {
            return bad("last_target", "test span is empty".into());
        }
        if self.methods.is_empty() {
            return bad("methods", "no methods".into());
        }
        if self.validation == 0 {
            return bad("validation", "must be positive".into());
        }
        self.solvers.smc.validate()
    }

    pub fn target_dates(&self) -> Vec<Month> {
        let n = self.first_target.months_until(self.last_target);
        (0..=n).map(|i| self.first_target.add_months(i)).collect()
    }
}

/// Supplies the data visible at each forecast origin.
pub trait DatasetSource: Sync {
    fn horizon(&self) -> usize;
    /// Dataset built from data dated in `[start, cutoff]` only.
    fn window(&self, start: Month, cutoff: Month) -> Result<ForecastDataset>;
    /// Realized `y^h_{t+h}` for origin `t`.
    fn realized(&self, origin: Month) -> Option<f64>;
}

/// Rebuilds the dataset from the raw table for every window, so transforms,
/// outlier screening and imputation never see data outside it.
pub struct TableSource<'a> {
    pub table: &'a FredmdTable,
    pub spec: DatasetSpec,
    target: Vec<f64>,
}

impl<'a> TableSource<'a> {
    pub fn new(table: &'a FredmdTable, spec: DatasetSpec) -> Result<Self> {
        let ti = table
            .index_of(spec.target.series_id())
            .ok_or_else(|| Error::TargetMissing(spec.target.series_id().into()))?;
        let (_, target) = build_targets(&table.series[ti], spec.target, spec.h)?;
        Ok(Self { table, spec, target })
    }
}

impl DatasetSource for TableSource<'_> {
    fn horizon(&self) -> usize {
        self.spec.h
    }

    fn window(&self, start: Month, cutoff: Month) -> Result<ForecastDataset> {
        let spec = DatasetSpec { start: Some(start), cutoff: Some(cutoff), ..self.spec.clone() };
        build_dataset(self.table, &spec)
    }

    fn realized(&self, origin: Month) -> Option<f64> {
        let v = *self.target.get(self.table.date_index(origin)?)?;
        v.is_finite().then_some(v)
    }
}

impl DatasetSource for ForecastDataset {
    fn horizon(&self) -> usize {
        self.spec.h
    }

    fn window(&self, start: Month, cutoff: Month) -> Result<ForecastDataset> {
        ForecastDataset::window(self, start, cutoff)
    }

    fn realized(&self, origin: Month) -> Option<f64> {
        let v = *self.target.get(self.date_index(origin)?)?;
        v.is_finite().then_some(v)
    }
}

/// Chosen AR order and its forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct ArForecast {
    pub order: usize,
    pub forecast: f64,
    pub coefficients: Vec<f64>,
}

/// Direct projection of `target[s]` on `1, y_s, ..., y_{s-order+1}` with the
/// order chosen by FCV on the last `validation` usable rows; order 0 is the
/// historical mean. `target[s]` must be NaN where unavailable.
pub fn ar_benchmark(y: &[f64], target: &[f64], origin: usize, max_order: usize, validation: usize) -> Result<ArForecast> {
    let grid: Vec<FaSpec> = (0..=max_order).map(|q| FaSpec { d: 0, q, m: 1 }).collect();
    let usable: Vec<usize> = (0..target.len()).filter(|&s| target[s].is_finite()).collect();
    let needed = validation + crate::factor::MIN_FORECAST_ROWS;
    if usable.len() < needed {
        return Err(Error::InsufficientHistory { needed, available: usable.len() });
    }
    let (fit, val) = usable.split_at(usable.len() - validation);
    let empty = DMatrix::zeros(y.len(), 0);
    let sel = select_fa_fcv(&grid, y, target, &empty, fit, val)?;
    let forecast = sel
        .model
        .predict(y, &empty, origin)
        .ok_or_else(|| Error::InvalidInput("AR regressors missing at the origin".into()))?;
    Ok(ArForecast { order: sel.model.spec.q, forecast, coefficients: sel.model.coefficients })
}

/// One method's output at one origin.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodForecast {
    pub forecast: Option<f64>,
    /// Selected `(series, lag)` pairs for variable-selection methods.
    pub selected: Vec<(String, usize)>,
    /// Chosen tuning value or failure message.
    pub detail: String,
}

impl MethodForecast {
    fn failed(e: Error) -> Self {
        Self { forecast: None, selected: Vec::new(), detail: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OriginResult {
    pub origin: Month,
    pub target_date: Month,
    pub realized: Option<f64>,
    /// Aligned with the configured methods.
    pub methods: Vec<MethodForecast>,
}

/// Variable-selection design for one window: rows `s` with complete lags,
/// columns without missing values on those rows and at the origin.
struct VsDesign {
    problem: RegressionProblem,
    origin_row: Vec<f64>,
}

fn vs_design(ds: &ForecastDataset, origin: usize, h: usize) -> Result<VsDesign> {
    let first = LAG_DEPTH + MAX_DIFF_ORDER;
    let rows: Vec<usize> = (first..=origin.saturating_sub(h)).filter(|&s| ds.target[s].is_finite()).collect();
    if rows.len() < 2 {
        return Err(Error::InsufficientHistory { needed: 2, available: rows.len() });
    }
    let stacked: Vec<Vec<f64>> = rows.iter().map(|&s| ds.stacked_row(s).expect("lags inside the window")).collect();
    let at_origin = ds.stacked_row(origin).ok_or_else(|| Error::InvalidInput("origin row lacks lags".into()))?;
    let n = ds.n_series();
    let keep: Vec<usize> = (0..at_origin.len())
        .filter(|&c| at_origin[c].is_finite() && stacked.iter().all(|r| r[c].is_finite()))
        .collect();
    if keep.is_empty() {
        return Err(Error::InvalidInput("no complete predictor columns in the window".into()));
    }
    let meta: Vec<ColumnMeta> = keep.iter().map(|&c| ColumnMeta::new(ds.names[c % n].clone(), c / n)).collect();
    let x = DMatrix::from_fn(rows.len(), keep.len(), |i, j| stacked[i][keep[j]]);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&s| ds.target[s]));
    let (problem, st) = RegressionProblem::standardized(x, y, Some(meta))?;
    let raw: Vec<f64> = keep.iter().map(|&c| at_origin[c]).collect();
    Ok(VsDesign { problem, origin_row: st.apply_row(&raw) })
}

fn vs_forecast(design: &VsDesign, kind: SolverKind, settings: SolverSettings, validation: usize) -> Result<MethodForecast> {
    let fitter = SolverFitter::new(kind, settings, &design.problem)?;
    let sel = forward_cv_select(&design.problem, &fitter, validation)?;
    let meta = design.problem.meta();
    let forecast = sel.model.predict_row(|j| design.origin_row[j]);
    let selected = sel.model.support.iter().map(|&j| (meta[j].variable_id.clone(), meta[j].lag)).collect();
    Ok(MethodForecast { forecast: Some(forecast), selected, detail: format!("size={}", sel.model.size()) })
}

fn fa_forecast(ds: &ForecastDataset, origin: usize, config: &RollingConfig) -> Result<MethodForecast> {
    let start = MAX_DIFF_ORDER;
    let t = origin + 1 - start;
    let min_obs = (MIN_OBSERVED_SHARE * t as f64).ceil() as usize;
    let cols: Vec<usize> = (0..ds.n_series())
        .filter(|&j| ds.fa_panel[j][start..=origin].iter().filter(|v| v.is_finite()).count() >= min_obs.max(2))
        .collect();
    let z = DMatrix::from_fn(t, cols.len(), |i, c| ds.fa_panel[cols[c]][start + i]);
    let labels: Vec<String> = cols.iter().map(|&j| ds.names[j].clone()).collect();
    let (zs, _, _) = standardize_observed(&z, &labels)?;
    let fit = extract_factors(&zs, config.fa_max_factors, &labels)?;
    let y = &ds.y[start..=origin];
    let target = &ds.target[start..=origin];
    let usable: Vec<usize> = (0..t).filter(|&s| target[s].is_finite()).collect();
    if usable.len() <= config.validation {
        return Err(Error::InsufficientHistory { needed: config.validation + 1, available: usable.len() });
    }
    let (fit_rows, val_rows) = usable.split_at(usable.len() - config.validation);
    let q_values: Vec<usize> = (0..=config.fa_max_ar).collect();
    let grid = FaSpec::grid(config.fa_max_factors.min(fit.s), &q_values, config.fa_max_lags);
    let sel = select_fa_fcv(&grid, y, target, &fit.factors, fit_rows, val_rows)?;
    let forecast = sel
        .model
        .predict(y, &fit.factors, t - 1)
        .ok_or_else(|| Error::InvalidInput("factor regressors missing at the origin".into()))?;
    let s = sel.model.spec;
    Ok(MethodForecast { forecast: Some(forecast), selected: Vec::new(), detail: format!("d={} q={} m={}", s.d, s.q, s.m) })
}

/// Forecasts from every configured method at one origin.
pub fn forecast_at(source: &dyn DatasetSource, config: &RollingConfig, target_date: Month, index: usize) -> Result<OriginResult> {
    let h = source.horizon();
    let origin = target_date.add_months(-(h as i64));
    let start = origin.add_months(-(config.window as i64 - 1));
    let ds = source.window(start, origin)?;
    let o = ds.date_index(origin).ok_or_else(|| Error::InsufficientHistory { needed: config.window, available: 0 })?;
    if o + 1 < config.window {
        return Err(Error::InsufficientHistory { needed: config.window, available: o + 1 });
    }
    let design = vs_design(&ds, o, h);
    let methods = config
        .methods
        .iter()
        .map(|m| {
            let out = match m {
                HarnessMethod::Ar => ar_benchmark(&ds.y, &ds.target, o, config.ar_max_order, config.validation).map(|ar| {
                    MethodForecast { forecast: Some(ar.forecast), selected: Vec::new(), detail: format!("order={}", ar.order) }
                }),
                HarnessMethod::Fa => fa_forecast(&ds, o, config),
                HarnessMethod::Solver(kind) => match &design {
                    Ok(d) => {
                        let mut settings = config.solvers.clone();
                        settings.smc.seed = derive_seed(config.seed, &format!("rolling-smc-h{h}"), index as u64);
                        vs_forecast(d, *kind, settings, config.validation)
                    }
                    Err(e) => Err(e.clone()),
                },
            };
            out.unwrap_or_else(|e| {
                log::warn!("{} failed at origin {origin} (h = {h}): {e}", m.name());
                MethodForecast::failed(e)
            })
        })
        .collect();
    Ok(OriginResult { origin, target_date, realized: source.realized(origin), methods })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodScore {
    pub method: HarnessMethod,
    pub mspe: f64,
    /// MSPE over this method's successful origins divided by the AR MSPE over
    /// the same origins.
    pub ratio: f64,
    pub forecasts: usize,
    pub failures: usize,
    /// `(series, lag)` → number of origins selecting it.
    pub frequency: BTreeMap<(String, usize), usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonReport {
    pub h: usize,
    pub origins: Vec<OriginResult>,
    pub scores: Vec<MethodScore>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollingReport {
    pub label: String,
    pub methods: Vec<HarnessMethod>,
    pub horizons: Vec<HorizonReport>,
}

fn score(methods: &[HarnessMethod], origins: &[OriginResult]) -> Vec<MethodScore> {
    let ar = methods.iter().position(|m| *m == HarnessMethod::Ar);
    methods
        .iter()
        .enumerate()
        .map(|(i, &method)| {
            let (mut se, mut se_ar, mut n, mut failures) = (0.0, 0.0, 0usize, 0usize);
            let mut frequency = BTreeMap::new();
            for o in origins {
                let Some(real) = o.realized else { continue };
                let mf = &o.methods[i];
                let ar_f = ar.and_then(|a| o.methods[a].forecast);
                match mf.forecast {
                    Some(f) if ar.is_none() || ar_f.is_some() => {
                        se += (real - f).powi(2);
                        if let Some(a) = ar_f {
                            se_ar += (real - a).powi(2);
                        }
                        n += 1;
                        for s in &mf.selected {
                            *frequency.entry(s.clone()).or_insert(0) += 1;
                        }
                    }
                    _ => failures += 1,
                }
            }
            let mspe = if n > 0 { se / n as f64 } else { f64::NAN };
            let ratio = match ar {
                Some(a) if a == i => {
                    if n > 0 {
                        1.0
                    } else {
                        f64::NAN
                    }
                }
                Some(_) if n > 0 => mspe / (se_ar / n as f64),
                _ => f64::NAN,
            };
            MethodScore { method, mspe, ratio, forecasts: n, failures, frequency }
        })
        .collect()
}

/// Runs the rolling backtest for one target over every configured horizon.
/// `sources` supplies one dataset source per horizon, in `config.horizons` order.
pub fn roll_forecast(label: &str, sources: &[&dyn DatasetSource], config: &RollingConfig) -> Result<RollingReport> {
    config.validate()?;
    if sources.len() != config.horizons.len() {
        return Err(Error::InvalidInput(format!("{} sources for {} horizons", sources.len(), config.horizons.len())));
    }
    let dates = config.target_dates();
    let mut horizons = Vec::new();
    for (&h, src) in config.horizons.iter().zip(sources) {
        if src.horizon() != h {
            return Err(Error::InvalidInput(format!("source horizon {} for h = {h}", src.horizon())));
        }
        let origins = dates
            .par_iter()
            .enumerate()
            .map(|(i, &d)| forecast_at(*src, config, d, i))
            .collect::<Result<Vec<_>>>()?;
        let scores = score(&config.methods, &origins);
        horizons.push(HorizonReport { h, origins, scores });
    }
    Ok(RollingReport { label: label.to_string(), methods: config.methods.clone(), horizons })
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.6}"),
        _ => String::new(),
    }
}

impl RollingReport {
    pub fn score(&self, h: usize, method: HarnessMethod) -> Option<&MethodScore> {
        self.horizons.iter().find(|r| r.h == h)?.scores.iter().find(|s| s.method == method)
    }

    /// Per-origin forecasts in long format.
    pub fn forecasts_csv(&self) -> String {
        let mut out = String::from("label,h,origin,target_date,realized,method,forecast,detail\n");
        for hr in &self.horizons {
            for o in &hr.origins {
                for (m, f) in self.methods.iter().zip(&o.methods) {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},\"{}\"",
                        self.label,
                        hr.h,
                        o.origin,
                        o.target_date,
                        cell(o.realized),
                        m.name(),
                        cell(f.forecast),
                        f.detail.replace('"', "'")
                    );
                }
            }
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("label,h,method,forecasts,failures,mspe,ratio\n");
        for hr in &self.horizons {
            for s in &hr.scores {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    self.label,
                    hr.h,
                    s.method.name(),
                    s.forecasts,
                    s.failures,
                    cell(Some(s.mspe)),
                    cell(Some(s.ratio))
                );
            }
        }
        out
    }

    /// Methods that are within 5% of the smallest non-AR ratio at horizon `h`.
    pub fn best_methods(&self, h: usize) -> Vec<HarnessMethod> {
        let Some(hr) = self.horizons.iter().find(|r| r.h == h) else { return Vec::new() };
        let candidates: Vec<&MethodScore> =
            hr.scores.iter().filter(|s| s.method != HarnessMethod::Ar && s.ratio.is_finite()).collect();
        let best = candidates.iter().map(|s| s.ratio).fold(f64::INFINITY, f64::min);
        candidates.iter().filter(|s| s.ratio <= BEST_RATIO_TOLERANCE * best).map(|s| s.method).collect()
    }

    /// Ratios to AR, horizons as rows, best methods in bold.
    pub fn ratio_table(&self) -> String {
        let shown: Vec<HarnessMethod> = self.methods.iter().copied().filter(|m| *m != HarnessMethod::Ar).collect();
        let mut out = format!("**{}**\n\n|", self.label);
        for m in &shown {
            let _ = write!(out, " | {}", m.name());
        }
        out.push_str(" |\n|---");
        for _ in &shown {
            out.push_str("|---");
        }
        out.push_str("|\n");
        for hr in &self.horizons {
            let best = self.best_methods(hr.h);
            let _ = write!(out, "| h={}", hr.h);
            for m in &shown {
                let r = hr.scores.iter().find(|s| s.method == *m).map(|s| s.ratio).unwrap_or(f64::NAN);
                if !r.is_finite() {
                    out.push_str(" | --");
                } else if best.contains(m) {
                    let _ = write!(out, " | **{r:.2}**");
                } else {
                    let _ = write!(out, " | {r:.2}");
                }
            }
            out.push_str(" |\n");
        }
        out
    }

    /// Predictors selected at least [`FREQUENCY_THRESHOLD`] times by `method`.
    pub fn frequency_table(&self, method: HarnessMethod) -> String {
        let mut out = format!("**{} {}**\n\n| h | predictor | lag | count |\n|---|---|---|---|\n", self.label, method.name());
        for hr in &self.horizons {
            let Some(s) = hr.scores.iter().find(|s| s.method == method) else { continue };
            let mut rows: Vec<(&(String, usize), &usize)> =
                s.frequency.iter().filter(|(_, c)| **c >= FREQUENCY_THRESHOLD).collect();
            rows.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
            for ((name, lag), c) in rows {
                let _ = writeln!(out, "| {} | {name} | {lag} | {c} |", hr.h);
            }
        }
        out
    }
}
