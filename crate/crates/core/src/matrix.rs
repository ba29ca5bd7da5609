//! Dense row-major `f64` matrices standing in for decoder hidden states.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite entry at ({row},{col})")]
    NonFinite { row: usize, col: usize },
    #[error("feature dimension must be positive")]
    ZeroDim,
}

/// A `rows × dim` matrix of finite values; `dim > 0`, `rows` may be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self, MatrixError> {
        if dim == 0 {
            return Err(MatrixError::ZeroDim);
        }
        if values.len() != rows * dim {
            return Err(MatrixError::ShapeMismatch(format!(
                "{} values for a {rows}x{dim} matrix",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(MatrixError::NonFinite {
                row: i / dim,
                col: i % dim,
            });
        }
        Ok(Self { rows, dim, values })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        Self {
            rows,
            dim,
            values: vec![0.0; rows * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MatrixError> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().position(|r| r.len() != dim) {
            return Err(MatrixError::ShapeMismatch(format!("row {r} has a different length")));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m.values[i * dim + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.dim + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.dim + col] = value;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Rows `range`, copied.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            rows: range.len(),
            dim: self.dim,
            values: self.values[range.start * self.dim..range.end * self.dim].to_vec(),
        }
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            dim: self.dim,
            values,
        }
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &FeatureMatrix) -> Result<Self, MatrixError> {
        if self.dim != other.dim {
            return Err(MatrixError::ShapeMismatch(format!(
                "cannot stack dim {} on dim {}",
                self.dim, other.dim
            )));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(Self {
            rows: self.rows + other.rows,
            dim: self.dim,
            values,
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `a += scale * b`
pub(crate) fn axpy(a: &mut [f64], scale: f64, b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += scale * y;
    }
}

/// Numerically stable `ln(1 + e^z)`.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable log-sum-exp; `-inf` for an empty slice.
pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl Serialize for FeatureMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FeatureMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        FeatureMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
