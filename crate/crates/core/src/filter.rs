//! Layout filter: a two-layer scorer over box embeddings that drops unwanted
//! text regions (watermarks) before pointing, plus the IOU-threshold
//! baselines it is compared with.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{grid_to_html, HtmlTree};
use crate::matrix::{axpy, dot, sigmoid, softplus, FeatureMatrix, MatrixError};
use crate::model::{CellAnnotations, TableGrid};

/// IOU cut-off of the greedy baseline: any overlap counts.
pub const GREEDY_IOU: f64 = 0.0;
/// IOU cut-off of the selective baseline.
pub const SELECTIVE_IOU: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("filter parameters contain non-finite values")]
    NonFinite,
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// `σ(w2 · relu(W1 x + b1) + b2)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// `hidden × d`
    pub w1: FeatureMatrix,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl FilterParams {
    pub fn new(w1: FeatureMatrix, b1: Vec<f64>, w2: Vec<f64>, b2: f64) -> Result<Self, FilterError> {
        let h = w1.rows();
        if h == 0 || b1.len() != h || w2.len() != h {
            return Err(FilterError::ShapeMismatch(format!(
                "hidden width {h} with {} biases and {} output weights",
                b1.len(),
                w2.len()
            )));
        }
        if b1.iter().chain(&w2).any(|v| !v.is_finite()) || !b2.is_finite() {
            return Err(FilterError::NonFinite);
        }
        Ok(Self { w1, b1, w2, b2 })
    }

    pub fn zeros(d: usize, hidden: usize) -> Self {
        Self {
            w1: FeatureMatrix::zeros(hidden, d),
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    pub fn default_hidden(d: usize) -> usize {
        (d / 2).max(1)
    }

    pub fn input_dim(&self) -> usize {
        self.w1.dim()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    /// All parameters as one vector: `W1`, `b1`, `w2`, `b2`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.w1.values().to_vec();
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }

    /// Inverse of [`FilterParams::flatten`].
    pub fn from_flat(d: usize, hidden: usize, flat: &[f64]) -> Result<Self, FilterError> {
        let n_w1 = hidden * d;
        if flat.len() != n_w1 + 2 * hidden + 1 {
            return Err(FilterError::LengthMismatch {
                left: flat.len(),
                right: n_w1 + 2 * hidden + 1,
            });
        }
        Self::new(
            FeatureMatrix::new(hidden, d, flat[..n_w1].to_vec())?,
            flat[n_w1..n_w1 + hidden].to_vec(),
            flat[n_w1 + hidden..n_w1 + 2 * hidden].to_vec(),
            flat[n_w1 + 2 * hidden],
        )
    }

    fn check_input(&self, b: &FeatureMatrix) -> Result<(), FilterError> {
        if b.dim() != self.input_dim() {
            return Err(FilterError::ShapeMismatch(format!(
                "box dim {} vs filter input dim {}",
                b.dim(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Pre-activations of the hidden layer and the output logit.
    fn forward(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let pre: Vec<f64> = (0..self.hidden())
            .map(|i| dot(self.w1.row(i), x) + self.b1[i])
            .collect();
        let z = pre.iter().zip(&self.w2).map(|(&a, &w)| a.max(0.0) * w).sum::<f64>() + self.b2;
        (pre, z)
    }
}

/// Keep-probability of every row of `b`. Pass only the real box rows.
pub fn filter_scores(b: &FeatureMatrix, params: &FilterParams) -> Result<Vec<f64>, FilterError> {
    params.check_input(b)?;
    Ok((0..b.rows()).map(|j| sigmoid(params.forward(b.row(j)).1)).collect())
}

/// Strictly above one half.
pub fn filter_mask(scores: &[f64]) -> Vec<bool> {
    scores.iter().map(|&s| s > 0.5).collect()
}

/// Keeps the rows and boxes whose mask entry is set, in order.
pub fn apply_mask(
    b: &FeatureMatrix,
    annotations: &CellAnnotations,
    mask: &[bool],
) -> Result<(FeatureMatrix, CellAnnotations), FilterError> {
    if b.rows() != mask.len() || annotations.len() != mask.len() {
        return Err(FilterError::LengthMismatch {
            left: mask.len(),
            right: if b.rows() != mask.len() {
                b.rows()
            } else {
                annotations.len()
            },
        });
    }
    let keep: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
    let boxes = keep.iter().map(|&j| annotations.boxes[j].clone()).collect();
    Ok((b.select_rows(&keep), CellAnnotations::new(boxes)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterLoss {
    pub loss: f64,
    /// Same layout as the parameters.
    pub grad: FilterParams,
}

/// Mean binary cross-entropy of the keep-probabilities against `labels`
/// (true for real boxes), with gradients for every parameter.
pub fn filter_bce_loss(b: &FeatureMatrix, params: &FilterParams, labels: &[bool]) -> Result<FilterLoss, FilterError> {
    params.check_input(b)?;
    if labels.len() != b.rows() {
        return Err(FilterError::LengthMismatch {
            left: labels.len(),
            right: b.rows(),
        });
    }
    let mut grad = FilterParams::zeros(params.input_dim(), params.hidden());
    if labels.is_empty() {
        return Ok(FilterLoss { loss: 0.0, grad });
    }
    let scale = 1.0 / labels.len() as f64;
    let mut loss = 0.0;
    for (j, &label) in labels.iter().enumerate() {
        let x = b.row(j);
        let (pre, z) = params.forward(x);
        let y = if label { 1.0 } else { 0.0 };
        loss += softplus(z) - y * z;
        let dz = (sigmoid(z) - y) * scale;
        grad.b2 += dz;
        for (i, &a) in pre.iter().enumerate() {
            if a <= 0.0 {
                continue;
            }
            grad.w2[i] += dz * a;
            let da = dz * params.w2[i];
            grad.b1[i] += da;
            axpy(grad.w1.row_mut(i), da, x);
        }
    }
    Ok(FilterLoss {
        loss: loss * scale,
        grad,
    })
}

/// Ground-truth structure with cell texts taken from the real boxes plus any
/// distractor whose IOU with one of the cell's boxes exceeds `iou_threshold`.
/// Texts are joined with single spaces in annotation order.
pub fn greedy_and_selective_baselines(grid: &TableGrid, annotations: &CellAnnotations, iou_threshold: f64) -> HtmlTree {
    let n_cells = grid.cells().len();
    let mut cell_boxes: Vec<Vec<usize>> = vec![Vec::new(); n_cells];
    for (j, b) in annotations.boxes.iter().enumerate() {
        if let Some(t) = b.target() {
            cell_boxes[t].push(j);
        }
    }
    let mut members = cell_boxes.clone();
    for (j, d) in annotations.boxes.iter().enumerate() {
        if !d.is_distractor() {
            continue;
        }
        for (cell, boxes) in cell_boxes.iter().enumerate() {
            let best = boxes
                .iter()
                .map(|&i| annotations.boxes[i].bbox.iou(&d.bbox))
                .fold(0.0, f64::max);
            if best > iou_threshold {
                members[cell].push(j);
            }
        }
    }
    let texts = members.into_iter().map(|mut js| {
        js.sort_unstable();
        js.iter()
            .map(|&j| annotations.boxes[j].text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    });
    fill_cells(grid, texts)
}

/// The grid's structure with `texts` placed on the cells in reading order.
pub(crate) fn fill_cells(grid: &TableGrid, texts: impl IntoIterator<Item = String>) -> HtmlTree {
    let tree = grid_to_html(grid, false);
    let mut texts = texts.into_iter();
    let rows = tree
        .rows()
        .iter()
        .map(|tr| {
            tr.children
                .iter()
                .map(|td| {
                    let mut td = td.clone();
                    td.text = texts.next();
                    td
                })
                .collect()
        })
        .collect();
    HtmlTree::from_rows(rows).expect("structure unchanged")
}
