//! Datasets and residual functions.
//!
//! A [`Dataset`] holds three aligned blocks: endogenous variables `Y` (including
//! the outcome), exogenous regressors `X`, and the full instrument block `Z`.
//! The columns of `X` are declared to be columns of `Z` through an index map.
//!
//! A [`ResidualModel`] supplies `Λ(y, x, β)` and its gradient in `β`; the
//! quantile restriction is `Q_τ[Λ | Z] = 0`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::{Error, Result};

/// Dense row-major matrix used for the observation blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn new(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::DimensionMismatch {
                context: "Table::new: data length",
                expected: nrows * ncols,
                got: data.len(),
            });
        }
        Ok(Self { nrows, ncols, data })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, data: vec![0.0; nrows * ncols] }
    }

    /// Builds a table from equally long columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let ncols = columns.len();
        let nrows = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != nrows) {
            return Err(Error::DimensionMismatch {
                context: "Table::from_columns: column length",
                expected: nrows,
                got: bad.len(),
            });
        }
        let mut data = Vec::with_capacity(nrows * ncols);
        for i in 0..nrows {
            data.extend(columns.iter().map(|c| c[i]));
        }
        Ok(Self { nrows, ncols, data })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.ncols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, j)).collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.nrows, self.ncols, &self.data)
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let mut t = Self::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                t.set(i, j, m[(i, j)]);
            }
        }
        t
    }

    /// Keeps only the listed rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.ncols);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        Self { nrows: rows.len(), ncols: self.ncols, data }
    }

    fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Aligned observation blocks for one sample. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: Table,
    x: Table,
    z: Table,
    x_in_z: Vec<usize>,
    pub y_names: Vec<String>,
    pub x_names: Vec<String>,
    pub z_names: Vec<String>,
}

impl Dataset {
    /// `x_in_z[j]` is the column of `Z` that holds column `j` of `X`.
    pub fn new(y: Table, x: Table, z: Table, x_in_z: Vec<usize>) -> Result<Self> {
        let n = y.nrows();
        if x.nrows() != n || z.nrows() != n {
            return Err(Error::InvalidData(format!(
                "row counts differ: Y has {n}, X has {}, Z has {}",
                x.nrows(),
                z.nrows()
            )));
        }
        if n == 0 {
            return Err(Error::InvalidData("dataset has no observations".into()));
        }
        if !(y.all_finite() && x.all_finite() && z.all_finite()) {
            return Err(Error::InvalidData("non-finite entry in observation blocks".into()));
        }
        if x_in_z.len() != x.ncols() {
            return Err(Error::InvalidData(format!(
                "index map covers {} of {} exogenous columns",
                x_in_z.len(),
                x.ncols()
            )));
        }
        if let Some(&bad) = x_in_z.iter().find(|&&k| k >= z.ncols()) {
            return Err(Error::InvalidData(format!(
                "exogenous column mapped to instrument {bad}, but Z has {} columns",
                z.ncols()
            )));
        }
        let names = |prefix: &str, k: usize| (0..k).map(|j| format!("{prefix}{j}")).collect();
        Ok(Self {
            y_names: names("y", y.ncols()),
            x_names: names("x", x.ncols()),
            z_names: names("z", z.ncols()),
            y,
            x,
            z,
            x_in_z,
        })
    }

    pub fn with_names(mut self, y: Vec<String>, x: Vec<String>, z: Vec<String>) -> Result<Self> {
        if y.len() != self.d_y() || x.len() != self.d_x() || z.len() != self.d_z() {
            return Err(Error::invalid("column name counts do not match block widths"));
        }
        self.y_names = y;
        self.x_names = x;
        self.z_names = z;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }
    pub fn d_y(&self) -> usize {
        self.y.ncols()
    }
    pub fn d_x(&self) -> usize {
        self.x.ncols()
    }
    pub fn d_z(&self) -> usize {
        self.z.ncols()
    }
    pub fn y(&self) -> &Table {
        &self.y
    }
    pub fn x(&self) -> &Table {
        &self.x
    }
    pub fn z(&self) -> &Table {
        &self.z
    }
    pub fn x_in_z(&self) -> &[usize] {
        &self.x_in_z
    }

    /// Same observations with a different instrument block.
    pub fn with_instruments(&self, z: Table, x_in_z: Vec<usize>, z_names: Vec<String>) -> Result<Self> {
        let mut out = Dataset::new(self.y.clone(), self.x.clone(), z, x_in_z)?;
        out.y_names = self.y_names.clone();
        out.x_names = self.x_names.clone();
        if z_names.len() == out.d_z() {
            out.z_names = z_names;
        }
        Ok(out)
    }

    /// Same instruments and exogenous block with a different `Y` block.
    pub fn with_endogenous(&self, y: Table, y_names: Vec<String>) -> Result<Self> {
        let mut out = Dataset::new(y, self.x.clone(), self.z.clone(), self.x_in_z.clone())?;
        out.x_names = self.x_names.clone();
        out.z_names = self.z_names.clone();
        if y_names.len() == out.d_y() {
            out.y_names = y_names;
        }
        Ok(out)
    }

    /// Reads a headed CSV file and assigns columns to blocks per `roles`.
    pub fn from_csv(path: impl AsRef<Path>, roles: &ColumnRoles) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?;
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::InvalidData(format!("row {}: column '{}' is not numeric: '{field}'", line + 1, headers[j]))
                })?;
                columns[j].push(v);
            }
        }
        let nrows = columns.first().map_or(0, Vec::len);
        let lookup = |name: &str| -> Result<Vec<f64>> {
            if roles.add_constant && name == CONSTANT_NAME && !headers.iter().any(|h| h == name) {
                return Ok(vec![1.0; nrows]);
            }
            headers
                .iter()
                .position(|h| h == name)
                .map(|j| columns[j].clone())
                .ok_or_else(|| Error::InvalidData(format!("column '{name}' not found in header")))
        };
        let y_names: Vec<String> =
            std::iter::once(roles.outcome.clone()).chain(roles.endogenous.iter().cloned()).collect();
        let mut x_names = Vec::new();
        if roles.add_constant {
            x_names.push(CONSTANT_NAME.to_owned());
        }
        x_names.extend(roles.exogenous.iter().filter(|n| *n != CONSTANT_NAME).cloned());
        let z_names: Vec<String> =
            x_names.iter().chain(roles.instruments.iter().filter(|n| !x_names.contains(n))).cloned().collect();
        let block = |names: &[String]| -> Result<Table> {
            let cols = names.iter().map(|n| lookup(n)).collect::<Result<Vec<_>>>()?;
            if cols.is_empty() {
                return Table::new(nrows, 0, Vec::new());
            }
            Table::from_columns(&cols)
        };
        let y = block(&y_names)?;
        let x = block(&x_names)?;
        let z = block(&z_names)?;
        let x_in_z = (0..x_names.len()).collect();
        Dataset::new(y, x, z, x_in_z)?.with_names(y_names, x_names, z_names)
    }
}

pub const CONSTANT_NAME: &str = "const";

/// Column-name to role assignment for CSV ingestion.
///
/// `Z` is built as the exogenous columns followed by the excluded
/// `instruments`. With `add_constant`, a column of ones named `const` is
/// prepended to the exogenous block unless the file already has one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub outcome: String,
    #[serde(default)]
    pub endogenous: Vec<String>,
    #[serde(default)]
    pub exogenous: Vec<String>,
    #[serde(default)]
    pub instruments: Vec<String>,
    #[serde(default = "default_true")]
    pub add_constant: bool,
}

fn default_true() -> bool {
    true
}

/// Compact parameter set `B` as per-coordinate bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                context: "ParamBox: bound lengths",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::invalid("every lower bound must be below its upper bound"));
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(dim: usize, radius: f64) -> Self {
        Self { lower: vec![-radius; dim], upper: vec![radius; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn project(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }
}

/// Residual function `Λ(y, x, β)` of a conditional quantile model.
///
/// Evaluation is row-wise and pure, so one model can be shared across threads.
pub trait ResidualModel: Send + Sync + std::fmt::Debug {
    fn dim_beta(&self) -> usize;
    fn evaluate(&self, y: &[f64], x: &[f64], beta: &[f64]) -> f64;
    /// Writes `∂Λ/∂β` into `out` (length `dim_beta`).
    fn gradient(&self, y: &[f64], x: &[f64], beta: &[f64], out: &mut [f64]);
    fn parameter_box(&self) -> &ParamBox;
    /// Checks that the model can be paired with `data`.
    fn check_dataset(&self, data: &Dataset) -> Result<()>;
    /// A reasonable starting value for iterative solvers.
    fn start_value(&self, data: &Dataset) -> Vec<f64>;
    fn name(&self) -> String;
    fn param_names(&self, data: &Dataset) -> Vec<String>;
}

fn check_rank_condition(model: &dyn ResidualModel, data: &Dataset) -> Result<()> {
    if model.dim_beta() > data.d_z() {
        return Err(Error::Identification(format!(
            "{} parameters but only {} instruments",
            model.dim_beta(),
            data.d_z()
        )));
    }
    Ok(())
}

/// `Λ = y₁ − y₋₁ᵀβ₁ − xᵀβ₂`, with `β = (β₁, β₂)` ordered endogenous first.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearResidual {
    pub outcome: usize,
    pub endog: Vec<usize>,
    pub exog: Vec<usize>,
    pub bounds: ParamBox,
}

pub const LINEAR_DEFAULT_RADIUS: f64 = 1e3;

pub fn linear_residual_model(outcome_col: usize, endog_cols: &[usize], exog_cols: &[usize]) -> Result<LinearResidual> {
    let mut seen = std::collections::HashSet::new();
    if endog_cols.contains(&outcome_col) {
        return Err(Error::invalid("outcome column is also listed as endogenous"));
    }
    if !endog_cols.iter().all(|c| seen.insert(*c)) {
        return Err(Error::invalid("duplicate endogenous column"));
    }
    seen.clear();
    if !exog_cols.iter().all(|c| seen.insert(*c)) {
        return Err(Error::invalid("duplicate exogenous column"));
    }
    let dim = endog_cols.len() + exog_cols.len();
    if dim == 0 {
        return Err(Error::invalid("linear model needs at least one regressor"));
    }
    Ok(LinearResidual {
        outcome: outcome_col,
        endog: endog_cols.to_vec(),
        exog: exog_cols.to_vec(),
        bounds: ParamBox::symmetric(dim, LINEAR_DEFAULT_RADIUS),
    })
}

impl LinearResidual {
    pub fn with_bounds(mut self, bounds: ParamBox) -> Result<Self> {
        if bounds.dim() != self.dim_beta() {
            return Err(Error::DimensionMismatch {
                context: "LinearResidual::with_bounds",
                expected: self.dim_beta(),
                got: bounds.dim(),
            });
        }
        self.bounds = bounds;
        Ok(self)
    }

    /// Regressor matrix `(y₋₁, x)` in parameter order.
    pub fn regressors(&self, data: &Dataset) -> DMatrix<f64> {
        let n = data.n();
        let k = self.dim_beta();
        DMatrix::from_fn(n, k, |i, j| {
            if j < self.endog.len() {
                data.y().get(i, self.endog[j])
            } else {
                data.x().get(i, self.exog[j - self.endog.len()])
            }
        })
    }

    pub fn outcome(&self, data: &Dataset) -> DVector<f64> {
        DVector::from_iterator(data.n(), (0..data.n()).map(|i| data.y().get(i, self.outcome)))
    }
}

impl ResidualModel for LinearResidual {
    fn dim_beta(&self) -> usize {
        self.endog.len() + self.exog.len()
    }

    #[inline]
    fn evaluate(&self, y: &[f64], x: &[f64], beta: &[f64]) -> f64 {
        let (b1, b2) = beta.split_at(self.endog.len());
        let mut v = y[self.outcome];
        for (c, b) in self.endog.iter().zip(b1) {
            v -= y[*c] * b;
        }
        for (c, b) in self.exog.iter().zip(b2) {
            v -= x[*c] * b;
        }
        v
    }

    #[inline]
    fn gradient(&self, y: &[f64], x: &[f64], _beta: &[f64], out: &mut [f64]) {
        let k = self.endog.len();
        for (o, c) in out[..k].iter_mut().zip(&self.endog) {
            *o = -y[*c];
        }
        for (o, c) in out[k..].iter_mut().zip(&self.exog) {
            *o = -x[*c];
        }
    }

    fn parameter_box(&self) -> &ParamBox {
        &self.bounds
    }

    fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if self.outcome >= data.d_y() || self.endog.iter().any(|&c| c >= data.d_y()) {
            return Err(Error::invalid(format!("endogenous/outcome column index out of range (d_Y = {})", data.d_y())));
        }
        if self.exog.iter().any(|&c| c >= data.d_x()) {
            return Err(Error::invalid(format!("exogenous column index out of range (d_X = {})", data.d_x())));
        }
        check_rank_condition(self, data)
    }

    /// Two-stage least squares when it exists, otherwise zero.
    fn start_value(&self, data: &Dataset) -> Vec<f64> {
        let r = self.regressors(data);
        let y = self.outcome(data);
        let z = data.z().to_dmatrix();
        match tsls_coefficients(&y, &r, &z) {
            Ok(mut b) => {
                self.bounds.project(b.as_mut_slice());
                b.iter().cloned().collect()
            }
            Err(_) => vec![0.0; self.dim_beta()],
        }
    }

    fn name(&self) -> String {
        "linear".into()
    }

    fn param_names(&self, data: &Dataset) -> Vec<String> {
        self.endog
            .iter()
            .map(|&c| data.y_names[c].clone())
            .chain(self.exog.iter().map(|&c| data.x_names[c].clone()))
            .collect()
    }
}

/// Two-stage least squares coefficients `(X̂ᵀX)⁻¹X̂ᵀy` with `X̂ = P_Z X`.
pub fn tsls_coefficients(y: &DVector<f64>, regressors: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DVector<f64>> {
    if z.ncols() < regressors.ncols() {
        return Err(Error::Identification("fewer instruments than regressors".into()));
    }
    let mut fitted = DMatrix::zeros(regressors.nrows(), regressors.ncols());
    for j in 0..regressors.ncols() {
        let col = regressors.column(j).into_owned();
        let coef = linalg::least_squares(z, &col)?;
        fitted.set_column(j, &(z * coef));
    }
    let a = fitted.transpose() * regressors;
    let b = fitted.transpose() * y;
    if linalg::column_rank(&a) < a.ncols() {
        return Err(Error::Identification("projected regressors are rank deficient".into()));
    }
    linalg::solve(&a, &b)
}

/// Nonlinear Euler-equation residual `Λ = β R C^{−γ} − 1` with parameters
/// `(β, γ)`, where `R = 1 + r` is the gross real return and `C` the gross
/// consumption ratio `C_{t+1}/C_t`, both read in levels from `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerResidual {
    pub ratio_col: usize,
    pub return_col: usize,
    pub bounds: ParamBox,
    pub start: [f64; 2],
}

/// Euler residual reading the consumption ratio from `Y[0]` and the gross
/// return from `Y[1]`.
pub fn euler_residual_model() -> EulerResidual {
    EulerResidual {
        ratio_col: 0,
        return_col: 1,
        bounds: ParamBox { lower: vec![0.5, -1000.0], upper: vec![1.5, 1000.0] },
        start: [0.99, 5.0],
    }
}

impl ResidualModel for EulerResidual {
    fn dim_beta(&self) -> usize {
        2
    }

    #[inline]
    fn evaluate(&self, y: &[f64], _x: &[f64], beta: &[f64]) -> f64 {
        beta[0] * y[self.return_col] * (-beta[1] * y[self.ratio_col].ln()).exp() - 1.0
    }

    #[inline]
    fn gradient(&self, y: &[f64], _x: &[f64], beta: &[f64], out: &mut [f64]) {
        let log_ratio = y[self.ratio_col].ln();
        let discounted = y[self.return_col] * (-beta[1] * log_ratio).exp();
        out[0] = discounted;
        out[1] = -beta[0] * discounted * log_ratio;
    }

    fn parameter_box(&self) -> &ParamBox {
        &self.bounds
    }

    fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if self.ratio_col >= data.d_y() || self.return_col >= data.d_y() {
            return Err(Error::invalid("Euler model column index out of range"));
        }
        for i in 0..data.n() {
            let row = data.y().row(i);
            if row[self.ratio_col] <= 0.0 {
                return Err(Error::InvalidData(format!("non-positive consumption ratio at row {i}")));
            }
            if row[self.return_col] <= 0.0 {
                return Err(Error::InvalidData(format!("non-positive gross return at row {i}")));
            }
        }
        check_rank_condition(self, data)
    }

    fn start_value(&self, _data: &Dataset) -> Vec<f64> {
        self.start.to_vec()
    }

    fn name(&self) -> String {
        "euler".into()
    }

    fn param_names(&self, _data: &Dataset) -> Vec<String> {
        vec!["discount".into(), "gamma".into()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fd_gradient(m: &dyn ResidualModel, y: &[f64], x: &[f64], beta: &[f64]) -> Vec<f64> {
        (0..beta.len())
            .map(|j| {
                let step = 1e-6 * beta[j].abs().max(1.0);
                let mut up = beta.to_vec();
                let mut dn = beta.to_vec();
                up[j] += step;
                dn[j] -= step;
                (m.evaluate(y, x, &up) - m.evaluate(y, x, &dn)) / (2.0 * step)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|q| q * q).sum::<f64>().sqrt().max(1e-12);
        num / den
    }

    #[test]
    fn linear_reference_values() {
        let m = linear_residual_model(0, &[1], &[0]).unwrap();
        assert_eq!(m.evaluate(&[3.0, 7.0], &[1.0], &[0.0, 0.0]), 3.0);
        assert_eq!(m.evaluate(&[2.0, 1.0], &[1.0], &[1.0, 1.0]), 0.0);
        let mut g = [0.0; 2];
        m.gradient(&[2.0, 1.0], &[1.0], &[1.0, 1.0], &mut g);
        assert_eq!(g, [-1.0, -1.0]);
    }

    #[test]
    fn linear_rejects_bad_indices() {
        assert!(linear_residual_model(0, &[0], &[0]).is_err());
        assert!(linear_residual_model(0, &[1, 1], &[]).is_err());
        assert!(linear_residual_model(0, &[], &[]).is_err());
        let m = linear_residual_model(0, &[3], &[0]).unwrap();
        let data = Dataset::new(
            Table::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            Table::new(2, 1, vec![1.0, 1.0]).unwrap(),
            Table::new(2, 2, vec![1.0, 0.0, 1.0, 1.0]).unwrap(),
            vec![0],
        )
        .unwrap();
        assert!(m.check_dataset(&data).is_err());
    }

    #[test]
    fn euler_reference_values() {
        let m = euler_residual_model();
        assert_eq!(m.evaluate(&[1.0, 1.0], &[], &[1.0, 3.7]), 0.0);
        let v = m.evaluate(&[1.002, 1.01], &[], &[0.99, 5.0]);
        let oracle = 0.99 * 1.01 * 1.002f64.powf(-5.0) - 1.0;
        assert!((v - oracle).abs() < 1e-15);
    }

    #[test]
    fn euler_rejects_non_positive_levels() {
        let m = euler_residual_model();
        let data = Dataset::new(
            Table::new(2, 2, vec![1.01, 1.0, -0.5, 1.0]).unwrap(),
            Table::new(2, 1, vec![1.0, 1.0]).unwrap(),
            Table::new(2, 2, vec![1.0, 0.3, 1.0, 0.2]).unwrap(),
            vec![0],
        )
        .unwrap();
        let err = m.check_dataset(&data).unwrap_err();
        assert!(err.to_string().contains("consumption ratio"));
    }

    #[test]
    fn dataset_validation() {
        let y = Table::new(2, 1, vec![1.0, 2.0]).unwrap();
        let x = Table::new(2, 1, vec![1.0, 1.0]).unwrap();
        let z = Table::new(2, 1, vec![1.0, 1.0]).unwrap();
        assert!(Dataset::new(y.clone(), x.clone(), z.clone(), vec![0]).is_ok());
        assert!(Dataset::new(y.clone(), x.clone(), z.clone(), vec![1]).is_err());
        assert!(Dataset::new(y.clone(), x.clone(), z.clone(), vec![]).is_err());
        let short = Table::new(1, 1, vec![1.0]).unwrap();
        assert!(Dataset::new(y.clone(), x.clone(), short, vec![0]).is_err());
        let nan = Table::new(2, 1, vec![1.0, f64::NAN]).unwrap();
        assert!(Dataset::new(nan, x, z, vec![0]).is_err());
    }

    #[test]
    fn csv_ingestion_assigns_roles() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "y,d,w,z\n1,0,0.5,1\n2,1,0.25,0\n3,1,1.0,1\n").unwrap();
        let roles = ColumnRoles {
            outcome: "y".into(),
            endogenous: vec!["d".into()],
            exogenous: vec!["w".into()],
            instruments: vec!["z".into()],
            add_constant: true,
        };
        let data = Dataset::from_csv(&path, &roles).unwrap();
        assert_eq!(data.n(), 3);
        assert_eq!(data.y_names, vec!["y", "d"]);
        assert_eq!(data.x_names, vec!["const", "w"]);
        assert_eq!(data.z_names, vec!["const", "w", "z"]);
        assert_eq!(data.z().row(1), &[1.0, 0.25, 0.0]);
        assert_eq!(data.x_in_z(), &[0, 1]);

        std::fs::write(&path, "y,d\n1,x\n").unwrap();
        assert!(Dataset::from_csv(&path, &roles).is_err());
        assert!(Dataset::from_csv(dir.path().join("missing.csv"), &roles).is_err());
    }

    proptest! {
        #[test]
        fn linear_gradient_matches_finite_differences(
            y in prop::collection::vec(-5.0f64..5.0, 3),
            x in prop::collection::vec(-5.0f64..5.0, 2),
            beta in prop::collection::vec(-3.0f64..3.0, 4),
        ) {
            let m = linear_residual_model(0, &[1, 2], &[0, 1]).unwrap();
            let mut g = vec![0.0; 4];
            m.gradient(&y, &x, &beta, &mut g);
            let fd = fd_gradient(&m, &y, &x, &beta);
            let scale = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
            prop_assume!(scale > 1e-3);
            prop_assert!(rel_err(&g, &fd) <= 1e-6);
        }

        #[test]
        fn euler_gradient_matches_finite_differences(
            ratio in 0.95f64..1.05,
            gross in 0.97f64..1.05,
            discount in 0.6f64..1.4,
            gamma in -20.0f64..20.0,
        ) {
            let m = euler_residual_model();
            let y = [ratio, gross];
            let beta = [discount, gamma];
            let mut g = vec![0.0; 2];
            m.gradient(&y, &[], &beta, &mut g);
            let fd = fd_gradient(&m, &y, &[], &beta);
            prop_assert!(rel_err(&g, &fd) <= 1e-6);
        }

        #[test]
        fn linear_model_is_affine(
            y in prop::collection::vec(-5.0f64..5.0, 2),
            b1 in prop::collection::vec(-3.0f64..3.0, 2),
            b2 in prop::collection::vec(-3.0f64..3.0, 2),
        ) {
            let m = linear_residual_model(0, &[1], &[0]).unwrap();
            let x = [1.0];
            let sum: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a + b).collect();
            let lhs = m.evaluate(&y, &x, &b1) + m.evaluate(&y, &x, &b2) - m.evaluate(&y, &x, &sum);
            prop_assert!((lhs - y[0]).abs() <= 1e-12 * (1.0 + y.iter().map(|v| v.abs()).sum::<f64>() * 10.0));
        }
    }
}
