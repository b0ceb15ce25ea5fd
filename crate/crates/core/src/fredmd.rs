//! FRED-MD ingestion: CSV parsing, stationarity transforms, outlier handling,
//! forecast targets and lag-stacked predictor panels.
//!
//! Every step that looks at the data (outlier detection, imputation) takes a
//! cutoff and reads nothing dated after it, so a dataset built for a forecast
//! origin never sees the future.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Monthly calendar index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Month {
    pub year: i32,
    /// 1..=12.
    pub month: u32,
}

impl Month {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidInput(format!("month {month} out of range")));
        }
        Ok(Self { year, month })
    }

    /// Months since year 0.
    pub fn ordinal(self) -> i64 {
        i64::from(self.year) * 12 + i64::from(self.month) - 1
    }

    pub fn from_ordinal(o: i64) -> Self {
        Self { year: o.div_euclid(12) as i32, month: o.rem_euclid(12) as u32 + 1 }
    }

    pub fn add_months(self, n: i64) -> Self {
        Self::from_ordinal(self.ordinal() + n)
    }

    /// `other - self` in months.
    pub fn months_until(self, other: Month) -> i64 {
        other.ordinal() - self.ordinal()
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{:02}", self.year, self.month)
    }
}

impl FromStr for Month {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_date(s)
    }
}

fn parse_int<T: FromStr>(s: &str, what: &str, whole: &str) -> Result<T> {
    let s = s.trim();
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::InvalidInput(format!("bad {what} in date {whole:?}")));
    }
    s.parse().map_err(|_| Error::InvalidInput(format!("bad {what} in date {whole:?}")))
}

/// Accepts `m/d/yyyy`, `yyyy:mm`, `yyyy-mm` and `yyyy-mm-dd`.
pub fn parse_date(s: &str) -> Result<Month> {
    let t = s.trim();
    let parts: Vec<&str>;
    let (year, month, day): (i32, u32, Option<u32>) = if t.contains('/') {
        parts = t.split('/').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidInput(format!("bad date {s:?}")));
        }
        (parse_int(parts[2], "year", s)?, parse_int(parts[0], "month", s)?, Some(parse_int(parts[1], "day", s)?))
    } else if t.contains(':') {
        parts = t.split(':').collect();
        if parts.len() != 2 {
            return Err(Error::InvalidInput(format!("bad date {s:?}")));
        }
        (parse_int(parts[0], "year", s)?, parse_int(parts[1], "month", s)?, None)
    } else {
        parts = t.split('-').collect();
        match parts.len() {
            2 => (parse_int(parts[0], "year", s)?, parse_int(parts[1], "month", s)?, None),
            3 => (parse_int(parts[0], "year", s)?, parse_int(parts[1], "month", s)?, Some(parse_int(parts[2], "day", s)?)),
            _ => return Err(Error::InvalidInput(format!("bad date {s:?}"))),
        }
    };
    if !(1000..=9999).contains(&year) {
        return Err(Error::InvalidInput(format!("year out of range in {s:?}")));
    }
    if let Some(d) = day {
        if !(1..=31).contains(&d) {
            return Err(Error::InvalidInput(format!("day out of range in {s:?}")));
        }
    }
    Month::new(year, month)
}

/// Raw FRED-MD panel. Missing cells are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct FredmdTable {
    pub dates: Vec<Month>,
    pub names: Vec<String>,
    pub tcodes: Vec<u8>,
    /// One vector per series, aligned with `dates`.
    pub series: Vec<Vec<f64>>,
}

impl FredmdTable {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n.eq_ignore_ascii_case(name))
    }

    pub fn date_index(&self, m: Month) -> Option<usize> {
        let first = *self.dates.first()?;
        let i = first.months_until(m);
        (i >= 0 && (i as usize) < self.dates.len()).then_some(i as usize)
    }

    pub fn n_series(&self) -> usize {
        self.names.len()
    }
}

fn trim_trailing_empty(mut cells: Vec<String>) -> Vec<String> {
    while cells.last().is_some_and(|c| c.trim().is_empty()) {
        cells.pop();
    }
    cells
}

fn parse_tcode(cell: &str) -> Option<u8> {
    let v: f64 = cell.trim().parse().ok()?;
    (v.fract() == 0.0 && (1.0..=7.0).contains(&v)).then_some(v as u8)
}

/// Parses the FRED-MD layout: header row, transform-code row, then one row per month.
pub fn parse_fredmd(bytes: &[u8]) -> Result<FredmdTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(bytes);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
        rows.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    let mut it = rows.into_iter().enumerate();
    let (_, header) = it.next().ok_or_else(|| Error::MissingTransformRow("empty file".into()))?;
    let header = trim_trailing_empty(header);
    if header.len() < 2 {
        return Err(Error::MissingTransformRow("header has no series".into()));
    }
    let names: Vec<String> = header[1..].iter().map(|s| s.trim().to_string()).collect();
    let (_, trow) = it.next().ok_or_else(|| Error::MissingTransformRow("no row after the header".into()))?;
    let trow = trim_trailing_empty(trow);
    if !trow.first().is_some_and(|c| c.trim().to_ascii_lowercase().starts_with("transform")) {
        return Err(Error::MissingTransformRow("second row is not a transform-code row".into()));
    }
    if trow.len() != header.len() {
        return Err(Error::MissingTransformRow(format!("{} transform codes for {} series", trow.len() - 1, names.len())));
    }
    let tcodes = trow[1..]
        .iter()
        .enumerate()
        .map(|(j, c)| parse_tcode(c).ok_or_else(|| Error::MissingTransformRow(format!("bad code {c:?} for {}", names[j]))))
        .collect::<Result<Vec<u8>>>()?;

    let mut dates: Vec<Month> = Vec::new();
    let mut series = vec![Vec::new(); names.len()];
    for (r, row) in it {
        let row = trim_trailing_empty(row);
        if row.is_empty() {
            continue;
        }
        let date = parse_date(&row[0]).map_err(|_| Error::UnparseableCell { row: r, col: 0, value: row[0].clone() })?;
        if let Some(prev) = dates.last() {
            if prev.months_until(date) != 1 {
                return Err(Error::NonMonotoneDates { row: r });
            }
        }
        if row.len() > header.len() {
            return Err(Error::UnparseableCell { row: r, col: header.len(), value: row[header.len()].clone() });
        }
        dates.push(date);
        for (j, s) in series.iter_mut().enumerate() {
            let cell = row.get(j + 1).map(|c| c.trim()).unwrap_or("");
            let v = if cell.is_empty() || cell.eq_ignore_ascii_case("nan") || cell.eq_ignore_ascii_case("na") {
                f64::NAN
            } else {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => v,
                    _ => return Err(Error::UnparseableCell { row: r, col: j + 1, value: cell.to_string() }),
                }
            };
            s.push(v);
        }
    }
    Ok(FredmdTable { dates, names, tcodes, series })
}

/// Serializes a table in the layout [`parse_fredmd`] reads; NaN is an empty cell.
pub fn to_csv(table: &FredmdTable) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["sasdate".to_string()];
    header.extend(table.names.iter().cloned());
    let mut trow = vec!["Transform:".to_string()];
    trow.extend(table.tcodes.iter().map(|c| c.to_string()));
    // Writing to a Vec cannot fail.
    w.write_record(&header).expect("in-memory write");
    w.write_record(&trow).expect("in-memory write");
    for (i, d) in table.dates.iter().enumerate() {
        let mut row = vec![format!("{}/1/{}", d.month, d.year)];
        row.extend(table.series.iter().map(|s| if s[i].is_finite() { s[i].to_string() } else { String::new() }));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// SHA-256 of the raw file, hex encoded.
pub fn checksum(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn diff(x: &[f64]) -> Vec<f64> {
    let mut out = vec![f64::NAN; x.len()];
    for t in 1..x.len() {
        out[t] = x[t] - x[t - 1];
    }
    out
}

/// Applies a FRED-MD transform code. Entries consumed by differencing become NaN.
pub fn apply_transform(x: &[f64], tcode: u8, series: &str) -> Result<Vec<f64>> {
    let log = || -> Result<Vec<f64>> {
        x.iter()
            .enumerate()
            .map(|(t, &v)| {
                if v.is_finite() && v <= 0.0 {
                    Err(Error::NonPositiveForLog { series: series.to_string(), t })
                } else {
                    Ok(v.ln())
                }
            })
            .collect()
    };
    Ok(match tcode {
        1 => x.to_vec(),
        2 => diff(x),
        3 => diff(&diff(x)),
        4 => log()?,
        5 => diff(&log()?),
        6 => diff(&diff(&log()?)),
        7 => {
            if let Some(t) = x.iter().position(|v| v.is_finite() && *v <= 0.0) {
                return Err(Error::NonPositiveForLog { series: series.to_string(), t });
            }
            let mut growth = vec![f64::NAN; x.len()];
            for t in 1..x.len() {
                growth[t] = x[t] / x[t - 1] - 1.0;
            }
            diff(&growth)
        }
        c => return Err(Error::InvalidInput(format!("transform code {c} for {series}"))),
    })
}

/// Minimum observations before outliers are screened.
pub const MIN_OUTLIER_OBS: usize = 20;
pub const OUTLIER_IQR_MULTIPLE: f64 = 10.0;
pub const IQR_FLOOR: f64 = 1e-8;

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `(Q1, median, Q3)` with the inclusive-median rule: for odd `n` the median
/// belongs to both halves.
pub fn quartiles(values: &[f64]) -> Option<(f64, f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let half = n.div_ceil(2);
    let lower = &v[..half];
    let upper = &v[n - half..];
    Some((median_sorted(lower), median_sorted(&v), median_sorted(upper)))
}

/// Indices with `|x - median| > 10 IQR`, ignoring NaN. Series with fewer
/// than [`MIN_OUTLIER_OBS`] observations are not screened.
pub fn detect_outliers(x: &[f64]) -> Vec<usize> {
    let n_obs = x.iter().filter(|v| v.is_finite()).count();
    if n_obs < MIN_OUTLIER_OBS {
        return Vec::new();
    }
    let (q1, med, q3) = quartiles(x).expect("nonempty");
    let bound = OUTLIER_IQR_MULTIPLE * (q3 - q1).max(IQR_FLOOR);
    x.iter().enumerate().filter(|(_, v)| v.is_finite() && (*v - med).abs() > bound).map(|(t, _)| t).collect()
}

/// Linear interpolation across interior NaN runs; leading and trailing NaN stay.
pub fn interpolate_linear(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    let obs: Vec<usize> = (0..x.len()).filter(|&t| x[t].is_finite()).collect();
    for w in obs.windows(2) {
        let (a, b) = (w[0], w[1]);
        for t in a + 1..b {
            let f = (t - a) as f64 / (b - a) as f64;
            out[t] = x[a] + f * (x[b] - x[a]);
        }
    }
    out
}

/// Signal-to-noise ratios `q / r` searched when fitting the local-level model.
const LOCAL_LEVEL_RATIOS: [f64; 9] = [1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0, 3.0, 10.0];

struct LevelPass {
    filtered: Vec<f64>,
    filtered_var: Vec<f64>,
    predicted: Vec<f64>,
    predicted_var: Vec<f64>,
    /// Concentrated log-likelihood.
    loglik: f64,
}

/// Kalman filter for `x_t = mu_t + eps`, `mu_t = mu_{t-1} + eta`, with
/// `var(eps) = 1`, `var(eta) = ratio`, on `x[first..=last]`.
fn local_level_filter(x: &[f64], first: usize, last: usize, ratio: f64) -> LevelPass {
    let n = last - first + 1;
    let mut a = x[first];
    let mut p = 1e7;
    let (mut filtered, mut filtered_var) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut predicted, mut predicted_var) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut ss, mut logdet, mut m) = (0.0, 0.0, 0usize);
    for (i, &obs) in x[first..=last].iter().enumerate() {
        let (ap, pp) = if i == 0 { (a, p) } else { (a, p + ratio) };
        predicted.push(ap);
        predicted_var.push(pp);
        if obs.is_finite() {
            let f = pp + 1.0;
            let v = obs - ap;
            if i > 0 {
                ss += v * v / f;
                logdet += f.ln();
                m += 1;
            }
            let k = pp / f;
            a = ap + k * v;
            p = pp * (1.0 - k);
        } else {
            a = ap;
            p = pp;
        }
        filtered.push(a);
        filtered_var.push(p);
    }
    let m = m.max(1) as f64;
    let loglik = -0.5 * (m * (ss / m).max(f64::MIN_POSITIVE).ln() + logdet);
    LevelPass { filtered, filtered_var, predicted, predicted_var, loglik }
}

/// Fills interior NaN entries with the smoothed level of a local-level model
/// whose noise ratio maximizes the likelihood over a coarse grid. Falls back
/// to linear interpolation when fewer than 10 values are observed.
pub fn impute_local_level(x: &[f64]) -> Vec<f64> {
    let obs: Vec<usize> = (0..x.len()).filter(|&t| x[t].is_finite()).collect();
    if obs.len() < 10 {
        return interpolate_linear(x);
    }
    let (first, last) = (obs[0], *obs.last().expect("nonempty"));
    let best = LOCAL_LEVEL_RATIOS
        .iter()
        .map(|&r| local_level_filter(x, first, last, r))
        .max_by(|a, b| a.loglik.total_cmp(&b.loglik))
        .expect("nonempty grid");
    // Rauch-Tung-Striebel smoother.
    let n = best.filtered.len();
    let mut smooth = best.filtered.clone();
    for i in (0..n - 1).rev() {
        let j = best.filtered_var[i] / best.predicted_var[i + 1];
        smooth[i] = best.filtered[i] + j * (smooth[i + 1] - best.predicted[i + 1]);
    }
    let mut out = x.to_vec();
    for (i, s) in smooth.into_iter().enumerate() {
        if !out[first + i].is_finite() {
            out[first + i] = if s.is_finite() { s } else { f64::NAN };
        }
    }
    if out[first..=last].iter().any(|v| !v.is_finite()) {
        return interpolate_linear(x);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    Emp,
    Ip,
    Cpi,
}

impl Target {
    pub fn series_id(self) -> &'static str {
        match self {
            Target::Emp => "PAYEMS",
            Target::Ip => "INDPRO",
            Target::Cpi => "CPIAUCSL",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Emp => "EMP",
            Target::Ip => "IP",
            Target::Cpi => "CPI",
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "emp" | "payems" => Ok(Target::Emp),
            "ip" | "indpro" => Ok(Target::Ip),
            "cpi" | "cpiaucsl" => Ok(Target::Cpi),
            other => Err(Error::InvalidInput(format!("unknown target {other:?}"))),
        }
    }
}

/// `(y_t, y^h_{t+h})` from target levels, with `target[t]` holding `y^h_{t+h}`.
///
/// EMP and IP: `y^h = (1200/h) ln(X_{t+h}/X_t)`, `y_t = 1200 ln(X_t/X_{t-1})`.
/// CPI subtracts `1200 ln(CPI_t/CPI_{t-1})` from the h-step growth.
pub fn build_targets(levels: &[f64], target: Target, h: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if h == 0 {
        return Err(Error::InvalidInput("horizon must be positive".into()));
    }
    if let Some(t) = levels.iter().position(|v| v.is_finite() && *v <= 0.0) {
        return Err(Error::NonPositiveForLog { series: target.series_id().into(), t });
    }
    let n = levels.len();
    let ln: Vec<f64> = levels.iter().map(|v| v.ln()).collect();
    let mut y = vec![f64::NAN; n];
    for t in 1..n {
        y[t] = 1200.0 * (ln[t] - ln[t - 1]);
    }
    let mut yh = vec![f64::NAN; n];
    for t in 0..n.saturating_sub(h) {
        let growth = 1200.0 / h as f64 * (ln[t + h] - ln[t]);
        yh[t] = match target {
            Target::Cpi => growth - y[t],
            _ => growth,
        };
    }
    Ok((y, yh))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Remove every predictor series that contains an outlier.
    DropSeries,
    /// Keep series; outliers become missing for the factor model and are
    /// imputed for variable selection.
    Impute,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "drop" | "1" => Ok(Strategy::DropSeries),
            "impute" | "2" => Ok(Strategy::Impute),
            other => Err(Error::InvalidInput(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Imputer {
    LocalLevel,
    Linear,
}

pub const LAG_DEPTH: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub target: Target,
    pub h: usize,
    pub strategy: Strategy,
    pub imputer: Imputer,
    /// First date whose data may be read; `None` is the start of the table.
    pub start: Option<Month>,
    /// Last date whose data may be read; `None` is the end of the table.
    pub cutoff: Option<Month>,
}

impl DatasetSpec {
    pub fn new(target: Target, h: usize, strategy: Strategy) -> Self {
        Self { target, h, strategy, imputer: Imputer::LocalLevel, start: None, cutoff: None }
    }
}

/// Transformed predictors and targets up to a cutoff.
#[derive(Debug, Clone)]
pub struct ForecastDataset {
    pub spec: DatasetSpec,
    /// Dates up to and including the cutoff.
    pub dates: Vec<Month>,
    /// Retained predictor series.
    pub names: Vec<String>,
    /// Transformed predictors for variable selection, one vector per series.
    pub vs_panel: Vec<Vec<f64>>,
    /// Transformed predictors for the factor model; outliers are NaN under imputation.
    pub fa_panel: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// `target[t] = y^h_{t+h}`; NaN when `t + h` lies past the cutoff.
    pub target: Vec<f64>,
    /// Flagged outlier positions per retained series.
    pub outliers: Vec<(String, Vec<usize>)>,
    pub dropped: Vec<String>,
}

impl ForecastDataset {
    pub fn n_series(&self) -> usize {
        self.names.len()
    }

    /// Size of the lag-stacked predictor vector.
    pub fn n_predictors(&self) -> usize {
        self.n_series() * (LAG_DEPTH + 1)
    }

    pub fn date_index(&self, m: Month) -> Option<usize> {
        let first = *self.dates.first()?;
        let i = first.months_until(m);
        (i >= 0 && (i as usize) < self.dates.len()).then_some(i as usize)
    }

    /// Rows dated in `[start, cutoff]`, with targets whose horizon passes the
    /// cutoff masked. Outlier handling is inherited from `self`.
    pub fn window(&self, start: Month, cutoff: Month) -> Result<ForecastDataset> {
        let (a, b) = match (self.date_index(start), self.date_index(cutoff)) {
            (Some(a), Some(b)) if a <= b => (a, b),
            _ => return Err(Error::InvalidInput(format!("window {start}..{cutoff} outside the dataset"))),
        };
        let h = self.spec.h;
        let cut = |v: &Vec<f64>| v[a..=b].to_vec();
        let mut target = cut(&self.target);
        let n = target.len();
        for v in target.iter_mut().skip(n.saturating_sub(h)) {
            *v = f64::NAN;
        }
        let mut spec = self.spec.clone();
        spec.start = Some(start);
        spec.cutoff = Some(cutoff);
        Ok(ForecastDataset {
            spec,
            dates: self.dates[a..=b].to_vec(),
            names: self.names.clone(),
            vs_panel: self.vs_panel.iter().map(cut).collect(),
            fa_panel: self.fa_panel.iter().map(cut).collect(),
            y: cut(&self.y),
            target,
            outliers: self
                .outliers
                .iter()
                .map(|(name, idx)| (name.clone(), idx.iter().filter(|&&t| t >= a && t <= b).map(|t| t - a).collect()))
                .collect(),
            dropped: self.dropped.clone(),
        })
    }

    /// Lag-stacked predictors `(Z_t, Z_{t-1}, ..., Z_{t-5})` at row `t`, lag-major.
    pub fn stacked_row(&self, t: usize) -> Option<Vec<f64>> {
        if t < LAG_DEPTH || t >= self.dates.len() {
            return None;
        }
        let mut out = Vec::with_capacity(self.n_predictors());
        for lag in 0..=LAG_DEPTH {
            for s in &self.vs_panel {
                out.push(s[t - lag]);
            }
        }
        Some(out)
    }
}

/// Builds the panel for one target and horizon from data dated no later than
/// the cutoff.
pub fn build_dataset(table: &FredmdTable, spec: &DatasetSpec) -> Result<ForecastDataset> {
    let ti = table.index_of(spec.target.series_id()).ok_or_else(|| Error::TargetMissing(spec.target.series_id().into()))?;
    if table.n_series() != 128 {
        log::warn!("FRED-MD table has {} series; the reference vintage has 128", table.n_series());
    }
    let end = match spec.cutoff {
        Some(c) => table.date_index(c).ok_or_else(|| Error::InvalidInput(format!("cutoff {c} outside the table")))? + 1,
        None => table.dates.len(),
    };
    let begin = match spec.start {
        Some(s) => table.date_index(s).ok_or_else(|| Error::InvalidInput(format!("start {s} outside the table")))?,
        None => 0,
    };
    if begin >= end {
        return Err(Error::InvalidInput("empty date range".into()));
    }
    let dates = table.dates[begin..end].to_vec();
    let (y, target) = build_targets(&table.series[ti][begin..end], spec.target, spec.h)?;

    let transformed: Vec<Result<Vec<f64>>> = table
        .series
        .iter()
        .zip(&table.names)
        .zip(&table.tcodes)
        .map(|((s, name), &code)| apply_transform(&s[begin..end], code, name))
        .collect();
    let mut names = Vec::new();
    let mut vs_panel = Vec::new();
    let mut fa_panel = Vec::new();
    let mut outliers = Vec::new();
    let mut dropped = Vec::new();
    for ((name, res), j) in table.names.iter().zip(transformed).zip(0..) {
        let z = res?;
        // The target is kept as a predictor whatever its outliers.
        let flagged = if j == ti { Vec::new() } else { detect_outliers(&z) };
        match spec.strategy {
            Strategy::DropSeries if !flagged.is_empty() => {
                dropped.push(name.clone());
                continue;
            }
            Strategy::DropSeries => {
                vs_panel.push(z.clone());
                fa_panel.push(z);
            }
            Strategy::Impute => {
                let mut masked = z.clone();
                for &t in &flagged {
                    masked[t] = f64::NAN;
                }
                let filled = if flagged.is_empty() {
                    z
                } else {
                    let mut filled = match spec.imputer {
                        Imputer::LocalLevel => impute_local_level(&masked),
                        Imputer::Linear => interpolate_linear(&masked),
                    };
                    // Only flagged points are imputed; native gaps stay missing.
                    for t in 0..filled.len() {
                        if !masked[t].is_finite() && flagged.binary_search(&t).is_err() {
                            filled[t] = f64::NAN;
                        }
                    }
                    filled
                };
                vs_panel.push(filled);
                fa_panel.push(masked);
            }
        }
        outliers.push((name.clone(), flagged));
        names.push(name.clone());
    }
    Ok(ForecastDataset { spec: spec.clone(), dates, names, vs_panel, fa_panel, y, target, outliers, dropped })
}

/// Provenance record written next to every dataset snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub checksum: String,
    pub target: Target,
    pub horizon: usize,
    pub strategy: Strategy,
    pub first_date: String,
    pub last_date: String,
    pub n_series_raw: usize,
    pub n_series: usize,
    pub n_predictors: usize,
    pub dropped: Vec<String>,
    pub n_outliers: usize,
}

impl DatasetManifest {
    pub fn new(ds: &ForecastDataset, table: &FredmdTable, checksum: String) -> Self {
        Self {
            checksum,
            target: ds.spec.target,
            horizon: ds.spec.h,
            strategy: ds.spec.strategy,
            first_date: ds.dates.first().map(|d| d.to_string()).unwrap_or_default(),
            last_date: ds.dates.last().map(|d| d.to_string()).unwrap_or_default(),
            n_series_raw: table.n_series(),
            n_series: ds.n_series(),
            n_predictors: ds.n_predictors(),
            dropped: ds.dropped.clone(),
            n_outliers: ds.outliers.iter().map(|(_, o)| o.len()).sum(),
        }
    }
}

/// Snapshot of the transformed panel: date, y, target, then each series.
pub fn dataset_to_csv(ds: &ForecastDataset) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["date".to_string(), "y".into(), format!("y{}_lead", ds.spec.h)];
    header.extend(ds.names.iter().cloned());
    w.write_record(&header).expect("in-memory write");
    let cell = |v: f64| if v.is_finite() { format!("{v}") } else { String::new() };
    for (t, d) in ds.dates.iter().enumerate() {
        let mut row = vec![d.to_string(), cell(ds.y[t]), cell(ds.target[t])];
        row.extend(ds.vs_panel.iter().map(|s| cell(s[t])));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Strategy;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn toy() -> FredmdTable {
        let dates: Vec<Month> = (0..30).map(|i| Month::new(2000, 1).unwrap().add_months(i)).collect();
        let series = vec![
            (0..30).map(|t| 1.0 + t as f64 * 0.5).collect(),
            (0..30).map(|t| (0.01 * t as f64).exp() * 100.0).collect(),
            (0..30).map(|t| if t == 3 { f64::NAN } else { 50.0 + (t as f64).sqrt() }).collect(),
        ];
        FredmdTable { dates, names: vec!["A".into(), "PAYEMS".into(), "C".into()], tcodes: vec![1, 5, 6], series }
    }

    #[test]
    fn date_formats() {
        assert_eq!(parse_date("1/1/1959").unwrap(), Month::new(1959, 1).unwrap());
        assert_eq!(parse_date("1959:01").unwrap(), Month::new(1959, 1).unwrap());
        assert_eq!(parse_date("2018-12-01").unwrap(), Month::new(2018, 12).unwrap());
        assert_eq!(parse_date("2018-12").unwrap(), Month::new(2018, 12).unwrap());
        for bad in ["13/1/2000", "2000:00", "x", "1/1/19", "2000-1-40", "", "+1/1/2000"] {
            assert!(parse_date(bad).is_err(), "{bad}");
        }
        assert_eq!(Month::new(2015, 1).unwrap().add_months(-3).to_string(), "2014:10");
    }

    #[test]
    fn toy_table_round_trips() {
        let t = toy();
        let text = to_csv(&t);
        let back = parse_fredmd(text.as_bytes()).unwrap();
        assert_eq!(back.names, t.names);
        assert_eq!(back.tcodes, t.tcodes);
        assert_eq!(back.dates, t.dates);
        for (a, b) in back.series.iter().zip(&t.series) {
            for (x, y) in a.iter().zip(b) {
                assert!(x == y || (x.is_nan() && y.is_nan()));
            }
        }
    }

    #[test]
    fn structural_errors() {
        let no_tcodes = "sasdate,A,B\n1/1/2000,1,2\n";
        assert!(matches!(parse_fredmd(no_tcodes.as_bytes()), Err(Error::MissingTransformRow(_))));
        let mismatch = "sasdate,A,B\nTransform:,1\n1/1/2000,1,2\n";
        assert!(matches!(parse_fredmd(mismatch.as_bytes()), Err(Error::MissingTransformRow(_))));
        let gap = "sasdate,A\nTransform:,1\n1/1/2000,1\n3/1/2000,2\n";
        assert_eq!(parse_fredmd(gap.as_bytes()), Err(Error::NonMonotoneDates { row: 3 }));
        let junk = "sasdate,A\nTransform:,1\n1/1/2000,abc\n";
        assert!(matches!(parse_fredmd(junk.as_bytes()), Err(Error::UnparseableCell { row: 2, col: 1, .. })));
        let trailing = "sasdate,A\nTransform:,2\n1/1/2000,1\n2/1/2000,\n,\n";
        let t = parse_fredmd(trailing.as_bytes()).unwrap();
        assert_eq!(t.dates.len(), 2);
        assert!(t.series[0][1].is_nan());
    }

    #[test]
    fn transforms_on_analytic_series() {
        let exp: Vec<f64> = (0..20).map(|t| (0.01 * t as f64).exp()).collect();
        let t5 = apply_transform(&exp, 5, "e").unwrap();
        assert!(t5[0].is_nan());
        assert!(t5[1..].iter().all(|v| (v - 0.01).abs() < 1e-12));
        let ramp: Vec<f64> = (0..20).map(|t| 3.0 + 2.5 * t as f64).collect();
        let t2 = apply_transform(&ramp, 2, "r").unwrap();
        assert!(t2[1..].iter().all(|v| (v - 2.5).abs() < 1e-12));
        // ln x_t = 0.5 + 0.02 t + 0.003 t^2 has second difference 0.006.
        let quad: Vec<f64> = (0..20).map(|t| (0.5 + 0.02 * t as f64 + 0.003 * (t * t) as f64).exp()).collect();
        let t6 = apply_transform(&quad, 6, "q").unwrap();
        assert!(t6[..2].iter().all(|v| v.is_nan()));
        assert!(t6[2..].iter().all(|v| (v - 0.006).abs() < 1e-10));
        let t3 = apply_transform(&ramp, 3, "r").unwrap();
        assert!(t3[2..].iter().all(|v| v.abs() < 1e-12));
        let geo: Vec<f64> = (0..10).map(|t| 1.05f64.powi(t)).collect();
        let t7 = apply_transform(&geo, 7, "g").unwrap();
        assert!(t7[2..].iter().all(|v| v.abs() < 1e-12));
        assert!(matches!(apply_transform(&[1.0, 0.0], 5, "z"), Err(Error::NonPositiveForLog { t: 1, .. })));
        assert!(apply_transform(&[1.0, -1.0], 2, "z").is_ok());
    }

    #[test]
    fn log_difference_cumsum_recovers_log_levels() {
        let x: Vec<f64> = (0..40).map(|t| 10.0 + (t as f64 * 0.7).sin() + t as f64 * 0.1).collect();
        let d = apply_transform(&x, 5, "x").unwrap();
        let mut acc = x[0].ln();
        for t in 1..x.len() {
            acc += d[t];
            assert!((acc - x[t].ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn quartile_convention() {
        assert_eq!(quartiles(&[1.0, 2.0, 3.0, 4.0, 5.0]), Some((2.0, 3.0, 4.0)));
        assert_eq!(quartiles(&[1.0, 2.0, 3.0, 4.0]), Some((1.5, 2.5, 3.5)));
        assert_eq!(quartiles(&[f64::NAN]), None);
    }

    #[test]
    fn gaussian_has_no_outliers_and_spike_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(detect_outliers(&x).is_empty());
        let (q1, med, q3) = quartiles(&x).unwrap();
        x[123] = med + 20.0 * (q3 - q1);
        assert_eq!(detect_outliers(&x), vec![123]);
        assert!(detect_outliers(&x[..19]).is_empty());
    }

    #[test]
    fn constant_series_uses_iqr_floor() {
        let mut x = vec![2.0; 50];
        assert!(detect_outliers(&x).is_empty());
        x[10] = 2.0 + 1e-9;
        assert!(detect_outliers(&x).is_empty());
        x[20] = 3.0;
        assert_eq!(detect_outliers(&x), vec![20]);
    }

    #[test]
    fn doubling_employment_target() {
        let levels: Vec<f64> = (0..30).map(|t| 100.0 * 2f64.powf(t as f64 / 12.0)).collect();
        let (y, yh) = build_targets(&levels, Target::Emp, 12).unwrap();
        assert!((yh[0] - 100.0 * 2f64.ln()).abs() < 1e-10);
        assert!((y[5] - 100.0 * 2f64.ln()).abs() < 1e-10);
        assert!(yh[18].is_nan());
        let cpi: Vec<f64> = (0..30).map(|t| 50.0 * 1.003f64.powi(t)).collect();
        for h in [1, 3, 6, 12] {
            let (_, yh) = build_targets(&cpi, Target::Cpi, h).unwrap();
            assert!(yh[1..30 - h].iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn local_level_imputation_fills_flagged_points() {
        let x: Vec<f64> = (0..60).map(|t| if t == 30 || t == 31 { f64::NAN } else { t as f64 * 0.1 }).collect();
        let f = impute_local_level(&x);
        assert!((f[30] - 3.0).abs() < 0.2 && (f[31] - 3.1).abs() < 0.2, "{} {}", f[30], f[31]);
        let lin = interpolate_linear(&[f64::NAN, 1.0, f64::NAN, 3.0, f64::NAN]);
        assert!(lin[0].is_nan() && lin[4].is_nan());
        assert_eq!(lin[2], 2.0);
    }

    fn planted_table(n: usize, t: usize, contaminated: &[usize], seed: u64) -> FredmdTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dates = (0..t).map(|i| Month::new(1990, 1).unwrap().add_months(i as i64)).collect();
        let mut names: Vec<String> = (0..n).map(|j| format!("S{j}")).collect();
        names[0] = "PAYEMS".into();
        let mut series = Vec::new();
        for j in 0..n {
            let mut level: f64 = 100.0;
            let mut s = Vec::with_capacity(t);
            for i in 0..t {
                let e: f64 = StandardNormal.sample(&mut rng);
                level *= (0.002 + 0.001 * e).exp();
                s.push(if contaminated.contains(&j) && i == t / 2 { level * 5.0 } else { level });
            }
            series.push(s);
        }
        FredmdTable { dates, names, tcodes: vec![5; n], series }
    }

    #[test]
    fn drop_strategy_dimension() {
        let table = planted_table(128, 120, &[5, 40, 77], 3);
        let ds = build_dataset(&table, &DatasetSpec::new(Target::Emp, 3, Strategy::DropSeries)).unwrap();
        assert_eq!(ds.dropped, vec!["S5", "S40", "S77"]);
        assert_eq!(ds.n_predictors(), 750);
        let imp = build_dataset(&table, &DatasetSpec::new(Target::Emp, 3, Strategy::Impute)).unwrap();
        assert_eq!(imp.n_predictors(), 768);
        let j = imp.names.iter().position(|n| n == "S40").unwrap();
        assert!(imp.fa_panel[j][60].is_nan() && imp.fa_panel[j][61].is_nan());
        assert!(imp.vs_panel[j][60].is_finite());
        assert!(imp.vs_panel[j][60].abs() < 0.1);
    }

    #[test]
    fn missing_target_reported() {
        let mut t = planted_table(4, 40, &[], 1);
        t.names[0] = "X".into();
        let err = build_dataset(&t, &DatasetSpec::new(Target::Emp, 1, Strategy::DropSeries)).unwrap_err();
        assert_eq!(err, Error::TargetMissing("PAYEMS".into()));
    }

    #[test]
    fn stacked_rows_are_lag_major() {
        let table = planted_table(3, 40, &[], 2);
        let ds = build_dataset(&table, &DatasetSpec::new(Target::Emp, 1, Strategy::DropSeries)).unwrap();
        let row = ds.stacked_row(10).unwrap();
        assert_eq!(row.len(), 18);
        assert_eq!(row[3 * 2 + 1], ds.vs_panel[1][8]);
        assert!(ds.stacked_row(4).is_none());
    }

    fn shifted_future(seed: u64, cut: usize, strategy: Strategy) {
        let table = planted_table(6, 80, &[2], seed);
        let mut future = table.clone();
        for s in future.series.iter_mut() {
            for v in s.iter_mut().skip(cut + 1) {
                *v *= 3.0;
            }
        }
        let mut spec = DatasetSpec::new(Target::Emp, 3, strategy);
        spec.cutoff = Some(table.dates[cut]);
        let a = build_dataset(&table, &spec).unwrap();
        let b = build_dataset(&future, &spec).unwrap();
        assert_eq!(a.names, b.names);
        for t in 0..=cut {
            let (ra, rb) = (a.stacked_row(t), b.stacked_row(t));
            match (ra, rb) {
                (Some(ra), Some(rb)) => assert!(ra.iter().zip(&rb).all(|(x, y)| x == y || (x.is_nan() && y.is_nan()))),
                (None, None) => {}
                _ => panic!("row availability differs"),
            }
            assert!(a.target[t] == b.target[t] || (a.target[t].is_nan() && b.target[t].is_nan()));
        }
        // Targets whose horizon passes the cutoff are unavailable.
        assert!(a.target[cut - 2].is_nan());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn future_data_never_changes_past_features(seed in 0u64..1000, cut in 30usize..75, impute in any::<bool>()) {
            shifted_future(seed, cut, if impute { Strategy::Impute } else { Strategy::DropSeries });
        }

        #[test]
        fn outlier_set_is_shift_invariant(seed in 0u64..1000, shift in -1e3f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x: Vec<f64> = (0..60).map(|_| StandardNormal.sample(&mut rng)).collect();
            x[7] = 40.0;
            let y: Vec<f64> = x.iter().map(|v| v + shift).collect();
            prop_assert_eq!(detect_outliers(&x), detect_outliers(&y));
        }

        #[test]
        fn csv_round_trip(values in proptest::collection::vec(proptest::option::of(-1e6f64..1e6), 12..40), codes in proptest::collection::vec(1u8..=7, 2)) {
            let n = values.len() / 2;
            let series: Vec<Vec<f64>> = (0..2).map(|j| (0..n).map(|i| values[j * n + i].unwrap_or(f64::NAN)).collect()).collect();
            let dates = (0..n).map(|i| Month::new(1999, 11).unwrap().add_months(i as i64)).collect();
            let t = FredmdTable { dates, names: vec!["a".into(), "b".into()], tcodes: codes, series };
            let back = parse_fredmd(to_csv(&t).as_bytes()).unwrap();
            prop_assert_eq!(to_csv(&back), to_csv(&t));
            prop_assert_eq!(back.dates, t.dates);
        }
    }
}
