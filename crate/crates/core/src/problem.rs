//! The regression problem shared by every solver.
//!
//! The intercept is never carried as a column. Columns and the response are
//! centered once on construction and all solvers work on the centered data;
//! intercepts are recovered from the stored means.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Identifies a design column: the underlying variable and its lag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColumnMeta {
    pub variable_id: String,
    pub lag: usize,
}

impl ColumnMeta {
    pub fn new(variable_id: impl Into<String>, lag: usize) -> Self {
        Self { variable_id: variable_id.into(), lag }
    }

    /// `ID` for lag 0, `ID_l` otherwise.
    pub fn label(&self) -> String {
        if self.lag == 0 {
            self.variable_id.clone()
        } else {
            format!("{}_{}", self.variable_id, self.lag)
        }
    }
}

/// Column-wise affine map learned on a training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Fits sample mean and standard deviation (divisor `T - 1`) per column.
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let t = x.nrows();
        if t < 2 {
            return Err(Error::InvalidInput("standardization needs at least 2 rows".into()));
        }
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for (j, col) in x.column_iter().enumerate() {
            let m = col.mean();
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (t as f64 - 1.0);
            if !(var > 0.0) || !var.is_finite() {
                return Err(Error::InvalidInput(format!("column {j} has zero or non-finite variance")));
            }
            mean.push(m);
            scale.push(var.sqrt());
        }
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            for v in col.iter_mut() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        out
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, v)| (v - self.mean[j]) / self.scale[j])
            .collect()
    }
}

/// Design matrix, response and column metadata.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    x: DMatrix<f64>,
    x_mean: Vec<f64>,
    y: DVector<f64>,
    y_mean: f64,
    meta: Vec<ColumnMeta>,
    standardized: bool,
    col_sq: Vec<f64>,
    xty: Vec<f64>,
    sst: f64,
}

fn default_meta(p: usize) -> Vec<ColumnMeta> {
    (0..p).map(|j| ColumnMeta::new(format!("x{j}"), 0)).collect()
}

impl RegressionProblem {
    /// Builds a problem from raw columns. Columns are centered, not rescaled.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, meta: Option<Vec<ColumnMeta>>) -> Result<Self> {
        Self::build(x, y, meta, false)
    }

    /// Standardizes columns to mean 0 and sample variance 1, returning the
    /// fitted map so held-out rows can be transformed identically.
    pub fn standardized(
        x: DMatrix<f64>,
        y: DVector<f64>,
        meta: Option<Vec<ColumnMeta>>,
    ) -> Result<(Self, Standardizer)> {
        check_finite(&x, &y)?;
        let st = Standardizer::fit(&x)?;
        let xs = st.apply(&x);
        Ok((Self::build(xs, y, meta, true)?, st))
    }

    fn build(
        mut x: DMatrix<f64>,
        y: DVector<f64>,
        meta: Option<Vec<ColumnMeta>>,
        standardized: bool,
    ) -> Result<Self> {
        let (t, p) = x.shape();
        if t < 2 {
            return Err(Error::InvalidInput(format!("need T >= 2 observations, got {t}")));
        }
        if p < 1 {
            return Err(Error::InvalidInput("need at least one column".into()));
        }
        if y.len() != t {
            return Err(Error::InvalidInput(format!("response length {} != {t} rows", y.len())));
        }
        check_finite(&x, &y)?;
        let meta = match meta {
            Some(m) if m.len() != p => {
                return Err(Error::InvalidInput(format!("{} column labels for {p} columns", m.len())))
            }
            Some(m) => m,
            None => default_meta(p),
        };

        let mut x_mean = Vec::with_capacity(p);
        for mut col in x.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
            x_mean.push(m);
        }
        let y_mean = y.mean();
        let y = y.add_scalar(-y_mean);
        let col_sq = x.column_iter().map(|c| c.norm_squared()).collect();
        let xty = x.tr_mul(&y).iter().copied().collect();
        let sst = y.norm_squared();
        Ok(Self { x, x_mean, y, y_mean, meta, standardized, col_sq, xty, sst })
    }

    /// Problem on a subset of rows, re-centered on those rows.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Self> {
        let p = self.n_features();
        let x = DMatrix::from_fn(rows.len(), p, |i, j| self.raw_x(rows[i], j));
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.raw_y(i)));
        Self::build(x, y, Some(self.meta.clone()), false)
    }

    /// Problem restricted to a subset of columns.
    pub fn subset_columns(&self, cols: &[usize]) -> Result<Self> {
        let t = self.n_obs();
        let x = DMatrix::from_fn(t, cols.len(), |i, j| self.raw_x(i, cols[j]));
        let meta = cols.iter().map(|&c| self.meta[c].clone()).collect();
        let y = DVector::from_iterator(t, (0..t).map(|i| self.raw_y(i)));
        Self::build(x, y, Some(meta), self.standardized)
    }

    /// Same design with a different response.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        let t = self.n_obs();
        let x = DMatrix::from_fn(t, self.n_features(), |i, j| self.raw_x(i, j));
        Self::build(x, y, Some(self.meta.clone()), self.standardized)
    }

    pub fn n_obs(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    /// Centered design.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Centered response.
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn x_mean(&self) -> &[f64] {
        &self.x_mean
    }

    pub fn raw_x(&self, i: usize, j: usize) -> f64 {
        self.x[(i, j)] + self.x_mean[j]
    }

    pub fn raw_y(&self, i: usize) -> f64 {
        self.y[i] + self.y_mean
    }

    pub fn meta(&self) -> &[ColumnMeta] {
        &self.meta
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// `x_j' x_j` on centered data.
    pub fn col_sq(&self) -> &[f64] {
        &self.col_sq
    }

    /// `x_j' y` on centered data.
    pub fn xty(&self) -> &[f64] {
        &self.xty
    }

    /// Total sum of squares of the response around its mean.
    pub fn sst(&self) -> f64 {
        self.sst
    }

    /// Single-regressor R² for every column.
    pub fn univariate_r2(&self) -> Vec<f64> {
        (0..self.n_features())
            .map(|j| {
                let d = self.col_sq[j] * self.sst;
                if d > 0.0 {
                    (self.xty[j] * self.xty[j] / d).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Centered `X v` for a sparse coefficient vector given as (index, value) pairs.
    pub fn x_times_sparse(&self, coefs: impl IntoIterator<Item = (usize, f64)>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_obs());
        for (j, b) in coefs {
            if b != 0.0 {
                out.axpy(b, &self.x.column(j), 1.0);
            }
        }
        out
    }
}

fn check_finite(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite entry in design or response".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_columns_have_unit_variance() {
        let x = DMatrix::from_fn(30, 4, |i, j| ((i * 7 + j * 3) % 11) as f64 * (j + 1) as f64);
        let y = DVector::from_fn(30, |i, _| i as f64);
        let (p, _) = RegressionProblem::standardized(x, y, None).unwrap();
        for j in 0..4 {
            let c = p.x().column(j);
            assert!(c.mean().abs() < 1e-10);
            let var = c.norm_squared() / 29.0;
            assert!((var - 1.0).abs() < 1e-8);
        }
        assert!(p.is_standardized());
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        let x = DMatrix::from_element(1, 2, 1.0);
        assert!(RegressionProblem::new(x, DVector::zeros(1), None).is_err());
        let mut x = DMatrix::from_element(3, 2, 1.0);
        x[(0, 0)] = f64::NAN;
        assert!(RegressionProblem::new(x, DVector::zeros(3), None).is_err());
        let x = DMatrix::from_element(3, 2, 1.0);
        assert!(RegressionProblem::new(x, DVector::zeros(4), None).is_err());
    }

    #[test]
    fn subset_rows_recenters() {
        let x = DMatrix::from_fn(6, 1, |i, _| i as f64);
        let y = DVector::from_fn(6, |i, _| 2.0 * i as f64 + 1.0);
        let p = RegressionProblem::new(x, y, None).unwrap();
        let s = p.subset_rows(&[0, 1, 2]).unwrap();
        assert_eq!(s.n_obs(), 3);
        assert!((s.x_mean()[0] - 1.0).abs() < 1e-12);
        assert!((s.y_mean() - 3.0).abs() < 1e-12);
        assert!((s.raw_y(2) - 5.0).abs() < 1e-12);
    }
}
