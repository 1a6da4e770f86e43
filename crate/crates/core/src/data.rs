//! Row-major matrix of observations, plus the column scaler used to
//! standardize inputs before fitting.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense row-major matrix; rows are samples, columns are variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("rows have unequal lengths".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values: rows.concat(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// New matrix holding the given subset of rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            values,
        }
    }

    /// New matrix with columns reordered as `cols[k] = self[:, order[k]]`.
    pub fn select_columns(&self, order: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.rows * order.len());
        for i in 0..self.rows {
            for &j in order {
                values.push(self.get(i, j));
            }
        }
        Self {
            rows: self.rows,
            cols: order.len(),
            values,
        }
    }

    /// Two matrices side by side (same row count).
    pub fn hstack(left: &Self, right: &Self) -> Result<Self> {
        if left.rows != right.rows {
            return Err(Error::Shape(format!(
                "row mismatch: {} vs {}",
                left.rows, right.rows
            )));
        }
        let mut values = Vec::with_capacity(left.rows * (left.cols + right.cols));
        for i in 0..left.rows {
            values.extend_from_slice(left.row(i));
            values.extend_from_slice(right.row(i));
        }
        Self::new(left.rows, left.cols + right.cols, values)
    }

    /// CSV text with an `x1,...,xd` header. `f64` formatting round-trips
    /// exactly through `str::parse`, so export/import is bit-identical.
    pub fn to_csv_string(&self) -> String {
        let header: Vec<String> = (1..=self.cols).map(|j| format!("x{j}")).collect();
        let mut out = header.join(",");
        out.push('\n');
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Per-column affine standardizer: `x_std = (x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Degenerate columns get this floor instead of a zero scale.
pub const SCALE_FLOOR: f64 = 1e-8;

impl Scaler {
    /// Identity scaler (mean 0, scale 1) for models used in raw units.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Column means and standard deviations of `data`, scales floored at
    /// [`SCALE_FLOOR`] so constant columns stay usable.
    pub fn fit(data: &DataMatrix) -> Result<Self> {
        let (n, d) = (data.n_rows(), data.n_cols());
        if n == 0 {
            return Err(Error::Data("cannot fit scaler on empty data".into()));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (j, m) in mean.iter_mut().enumerate() {
                *m += data.get(i, j);
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for i in 0..n {
            for (j, v) in var.iter_mut().enumerate() {
                let delta = data.get(i, j) - mean[j];
                *v += delta * delta;
            }
        }
        let scale = var
            .iter()
            .map(|v| (v / n as f64).sqrt().max(SCALE_FLOOR))
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize_into(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..x.len() {
            out[j] = (x[j] - self.mean[j]) / self.scale[j];
        }
    }

    pub fn destandardize_into(&self, x_std: &[f64], out: &mut [f64]) {
        for j in 0..x_std.len() {
            out[j] = x_std[j] * self.scale[j] + self.mean[j];
        }
    }

    pub fn standardize_matrix(&self, data: &DataMatrix) -> DataMatrix {
        let mut out = data.clone();
        for i in 0..out.n_rows() {
            for j in 0..out.n_cols() {
                out.set(i, j, (data.get(i, j) - self.mean[j]) / self.scale[j]);
            }
        }
        out
    }

    /// Log-Jacobian of the standardization map, `-sum(ln scale)`. Added to
    /// standardized-space log-densities to express them in original units.
    pub fn log_jacobian(&self) -> f64 {
        -self.scale.iter().map(|s| s.ln()).sum::<f64>()
    }
}
