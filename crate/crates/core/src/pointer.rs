//! Layout pointer: associates text-region boxes with generated data tags.
//!
//! The decoder's last hidden states `h` (one row per box slot followed by one
//! row per generated tag) are split into box features `b` and tag features
//! `t`, projected, and compared by scaled dot product. Each box is supervised
//! with a softmax over the data-tag columns; a dedicated special box slot
//! (slot 0) scores every data tag for emptiness with a sigmoid.
//!
//! Box slot layout: `[special, real_1 .. real_n, pad ..]`, length `B`, with the
//! attention mask true on the special and real slots.

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{data_tag_indices, otsl_to_grid, DataTagIndexSet, HtmlTree, OtslError, OtslSequence};
use crate::filter::fill_cells;
use crate::matrix::{axpy, dot, log_sum_exp, sigmoid, softplus, FeatureMatrix, MatrixError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PointerError {
    #[error("{n_real} boxes plus the special slot do not fit in {box_slots} slots")]
    TooManyBoxes { n_real: usize, box_slots: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("the data tag set is empty")]
    EmptyD,
    #[error("target column {target} out of range for {columns} data tags (box {row})")]
    TargetOutOfRange { row: usize, target: usize, columns: usize },
    #[error("count mismatch: {0}")]
    CountMismatch(String),
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Otsl(#[from] OtslError),
}

/// Softmax temperature `τ > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self, PointerError> {
        if tau.is_finite() && tau > 0.0 {
            Ok(Self(tau))
        } else {
            Err(PointerError::InvalidTemperature(tau))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self(0.1)
    }
}

impl TryFrom<f64> for Temperature {
    type Error = PointerError;
    fn try_from(v: f64) -> Result<Self, PointerError> {
        Self::new(v)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// Fixed-length box block of the decoder input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceLayout {
    box_slots: usize,
    n_real: usize,
}

pub fn build_sequence_layout(n_real_boxes: usize, box_slots: usize) -> Result<SequenceLayout, PointerError> {
    if n_real_boxes + 1 > box_slots {
        return Err(PointerError::TooManyBoxes {
            n_real: n_real_boxes,
            box_slots,
        });
    }
    Ok(SequenceLayout {
        box_slots,
        n_real: n_real_boxes,
    })
}

impl SequenceLayout {
    /// `B`
    pub fn box_slots(&self) -> usize {
        self.box_slots
    }

    pub fn special_slot(&self) -> usize {
        0
    }

    pub fn n_real(&self) -> usize {
        self.n_real
    }

    pub fn n_pad(&self) -> usize {
        self.box_slots - 1 - self.n_real
    }

    pub fn real_slots(&self) -> std::ops::Range<usize> {
        1..1 + self.n_real
    }

    /// `N = B + T` for `n_tags` generated tags.
    pub fn total_len(&self, n_tags: usize) -> usize {
        self.box_slots + n_tags
    }

    pub fn attention_mask(&self) -> Vec<bool> {
        (0..self.box_slots).map(|i| i <= self.n_real).collect()
    }

    /// The real-box rows of a `B`-row box feature block.
    pub fn real_rows(&self, boxes: &FeatureMatrix) -> Result<FeatureMatrix, PointerError> {
        self.check_rows(boxes)?;
        Ok(boxes.slice_rows(self.real_slots()))
    }

    pub fn special_row<'a>(&self, boxes: &'a FeatureMatrix) -> Result<&'a [f64], PointerError> {
        self.check_rows(boxes)?;
        Ok(boxes.row(0))
    }

    fn check_rows(&self, boxes: &FeatureMatrix) -> Result<(), PointerError> {
        if boxes.rows() != self.box_slots {
            return Err(PointerError::ShapeMismatch(format!(
                "box block has {} rows, layout expects {}",
                boxes.rows(),
                self.box_slots
            )));
        }
        Ok(())
    }
}

/// Splits hidden states into the `B` box rows and the `T` tag rows.
pub fn split_hidden(
    hidden: &FeatureMatrix,
    layout: &SequenceLayout,
    n_tags: usize,
) -> Result<(FeatureMatrix, FeatureMatrix), PointerError> {
    let b = layout.box_slots;
    if hidden.rows() != b + n_tags {
        return Err(PointerError::ShapeMismatch(format!(
            "hidden states have {} rows, expected B + T = {} + {}",
            hidden.rows(),
            b,
            n_tags
        )));
    }
    Ok((hidden.slice_rows(0..b), hidden.slice_rows(b..b + n_tags)))
}

/// Row-wise affine map `x Wᵀ + bias` with `W` of shape `d_out × d_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMatrix {
    pub weights: FeatureMatrix,
    pub bias: Vec<f64>,
}

impl ProjectionMatrix {
    pub fn new(weights: FeatureMatrix, bias: Vec<f64>) -> Result<Self, PointerError> {
        if bias.len() != weights.rows() {
            return Err(PointerError::ShapeMismatch(format!(
                "bias of length {} for {} output features",
                bias.len(),
                weights.rows()
            )));
        }
        if bias.iter().any(|v| !v.is_finite()) {
            return Err(PointerError::ShapeMismatch("bias has non-finite entries".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weights: FeatureMatrix::identity(dim),
            bias: vec![0.0; dim],
        }
    }

    pub fn d_in(&self) -> usize {
        self.weights.dim()
    }

    pub fn d_out(&self) -> usize {
        self.weights.rows()
    }
}

pub fn project(x: &FeatureMatrix, p: &ProjectionMatrix) -> Result<FeatureMatrix, PointerError> {
    if x.dim() != p.d_in() {
        return Err(PointerError::ShapeMismatch(format!(
            "input dim {} does not match projection input dim {}",
            x.dim(),
            p.d_in()
        )));
    }
    let mut out = FeatureMatrix::zeros(x.rows(), p.d_out());
    for i in 0..x.rows() {
        let row = x.row(i);
        for (o, slot) in out.row_mut(i).iter_mut().enumerate() {
            *slot = dot(p.weights.row(o), row) + p.bias[o];
        }
    }
    Ok(out)
}

/// Gradients of a scalar loss through [`project`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionGrad {
    pub weights: FeatureMatrix,
    pub bias: Vec<f64>,
    pub input: FeatureMatrix,
}

/// Back-propagates `grad_out` (`rows × d_out`) through `project(x, p)`.
pub fn project_backward(
    x: &FeatureMatrix,
    p: &ProjectionMatrix,
    grad_out: &FeatureMatrix,
) -> Result<ProjectionGrad, PointerError> {
    if grad_out.rows() != x.rows() || grad_out.dim() != p.d_out() || x.dim() != p.d_in() {
        return Err(PointerError::ShapeMismatch(
            "projection backward shapes disagree".into(),
        ));
    }
    let mut weights = FeatureMatrix::zeros(p.d_out(), p.d_in());
    let mut bias = vec![0.0; p.d_out()];
    let mut input = FeatureMatrix::zeros(x.rows(), p.d_in());
    for i in 0..x.rows() {
        let g = grad_out.row(i);
        for (o, &go) in g.iter().enumerate() {
            bias[o] += go;
            axpy(weights.row_mut(o), go, x.row(i));
            axpy(input.row_mut(i), go, p.weights.row(o));
        }
    }
    Ok(ProjectionGrad { weights, bias, input })
}

fn check_tags(tags: &FeatureMatrix, data_tags: &DataTagIndexSet) -> Result<(), PointerError> {
    if data_tags.is_empty() {
        return Err(PointerError::EmptyD);
    }
    if let Some(&k) = data_tags.as_slice().iter().find(|&&k| k >= tags.rows()) {
        return Err(PointerError::ShapeMismatch(format!(
            "data tag position {k} beyond {} tag rows",
            tags.rows()
        )));
    }
    Ok(())
}

/// `logits[j][m] = b̄_j · t̄_{D[m]} / τ`, one column per data tag.
pub fn pointer_logits(
    boxes: &FeatureMatrix,
    tags: &FeatureMatrix,
    data_tags: &DataTagIndexSet,
    tau: Temperature,
) -> Result<FeatureMatrix, PointerError> {
    check_tags(tags, data_tags)?;
    if boxes.dim() != tags.dim() {
        return Err(PointerError::ShapeMismatch(format!(
            "box dim {} vs tag dim {}",
            boxes.dim(),
            tags.dim()
        )));
    }
    let cols = data_tags.len();
    let mut logits = FeatureMatrix::zeros(boxes.rows(), cols);
    for j in 0..boxes.rows() {
        let b = boxes.row(j);
        for (m, &k) in data_tags.as_slice().iter().enumerate() {
            logits.set(j, m, dot(b, tags.row(k)) / tau.value());
        }
    }
    Ok(logits)
}

/// A scalar loss with its gradient with respect to the logits it consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct PointerLoss {
    pub loss: f64,
    pub grad_logits: FeatureMatrix,
}

/// Mean negative log-likelihood of each box's target column.
///
/// `logits` holds one row per supervised (real) box; `targets[j]` is the
/// data-tag column of box `j`. The gradient is `(softmax - onehot) / rows`.
pub fn pointer_loss(logits: &FeatureMatrix, targets: &[usize]) -> Result<PointerLoss, PointerError> {
    if targets.len() != logits.rows() {
        return Err(PointerError::ShapeMismatch(format!(
            "{} targets for {} boxes",
            targets.len(),
            logits.rows()
        )));
    }
    let cols = logits.dim();
    let mut grad = FeatureMatrix::zeros(logits.rows(), cols);
    if logits.rows() == 0 {
        return Ok(PointerLoss {
            loss: 0.0,
            grad_logits: grad,
        });
    }
    let scale = 1.0 / logits.rows() as f64;
    let mut total = 0.0;
    for (j, &target) in targets.iter().enumerate() {
        if target >= cols {
            return Err(PointerError::TargetOutOfRange {
                row: j,
                target,
                columns: cols,
            });
        }
        let row = logits.row(j);
        let lse = log_sum_exp(row.iter().copied());
        total += lse - row[target];
        let g = grad.row_mut(j);
        for (m, slot) in g.iter_mut().enumerate() {
            *slot = (row[m] - lse).exp() * scale;
        }
        g[target] -= scale;
    }
    Ok(PointerLoss {
        loss: total * scale,
        grad_logits: grad,
    })
}

/// Chains a logit gradient back to the projected box and tag features.
pub fn pointer_feature_grads(
    boxes: &FeatureMatrix,
    tags: &FeatureMatrix,
    data_tags: &DataTagIndexSet,
    tau: Temperature,
    grad_logits: &FeatureMatrix,
) -> Result<(FeatureMatrix, FeatureMatrix), PointerError> {
    check_tags(tags, data_tags)?;
    if grad_logits.rows() != boxes.rows() || grad_logits.dim() != data_tags.len() {
        return Err(PointerError::ShapeMismatch("logit gradient shape".into()));
    }
    let inv_tau = 1.0 / tau.value();
    let mut g_boxes = FeatureMatrix::zeros(boxes.rows(), boxes.dim());
    let mut g_tags = FeatureMatrix::zeros(tags.rows(), tags.dim());
    for j in 0..boxes.rows() {
        for (m, &k) in data_tags.as_slice().iter().enumerate() {
            let g = grad_logits.get(j, m) * inv_tau;
            axpy(g_boxes.row_mut(j), g, tags.row(k));
            axpy(g_tags.row_mut(k), g, boxes.row(j));
        }
    }
    Ok((g_boxes, g_tags))
}

/// Empty-tag loss and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct EmptyPointerLoss {
    pub loss: f64,
    /// d loss / d (b̄₀ · t̄_{D[m]}), one entry per data tag.
    pub grad_logits: Vec<f64>,
    /// d loss / d b̄₀.
    pub grad_special: Vec<f64>,
    /// d loss / d t̄ (rows outside D are zero).
    pub grad_tags: FeatureMatrix,
}

/// Sigmoid emptiness probability of each data tag: `σ(b̄₀ · t̄_k)`.
pub fn empty_scores(
    special: &[f64],
    tags: &FeatureMatrix,
    data_tags: &DataTagIndexSet,
) -> Result<Vec<f64>, PointerError> {
    check_tags(tags, data_tags)?;
    check_special(special, tags)?;
    Ok(data_tags
        .as_slice()
        .iter()
        .map(|&k| sigmoid(dot(special, tags.row(k))))
        .collect())
}

fn check_special(special: &[f64], tags: &FeatureMatrix) -> Result<(), PointerError> {
    if special.len() != tags.dim() {
        return Err(PointerError::ShapeMismatch(format!(
            "special embedding dim {} vs tag dim {}",
            special.len(),
            tags.dim()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy of `σ(b̄₀ · t̄_k)` against the empty label of
/// every data tag `k`.
pub fn empty_pointer_loss(
    special: &[f64],
    tags: &FeatureMatrix,
    data_tags: &DataTagIndexSet,
    empty_labels: &[bool],
) -> Result<EmptyPointerLoss, PointerError> {
    check_tags(tags, data_tags)?;
    check_special(special, tags)?;
    if empty_labels.len() != data_tags.len() {
        return Err(PointerError::ShapeMismatch(format!(
            "{} empty labels for {} data tags",
            empty_labels.len(),
            data_tags.len()
        )));
    }
    let scale = 1.0 / data_tags.len() as f64;
    let mut loss = 0.0;
    let mut grad_logits = Vec::with_capacity(data_tags.len());
    let mut grad_special = vec![0.0; special.len()];
    let mut grad_tags = FeatureMatrix::zeros(tags.rows(), tags.dim());
    for (&k, &label) in data_tags.as_slice().iter().zip(empty_labels) {
        let z = dot(special, tags.row(k));
        let y = if label { 1.0 } else { 0.0 };
        // -[y ln σ(z) + (1-y) ln(1-σ(z))] = softplus(z) - y z
        loss += softplus(z) - y * z;
        let g = (sigmoid(z) - y) * scale;
        grad_logits.push(g);
        axpy(&mut grad_special, g, tags.row(k));
        axpy(grad_tags.row_mut(k), g, special);
    }
    Ok(EmptyPointerLoss {
        loss: loss * scale,
        grad_logits,
        grad_special,
        grad_tags,
    })
}

/// Box-to-tag associations resolved at inference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointerAssignment {
    box_to_tag: Vec<usize>,
    empty: Vec<bool>,
    tag_boxes: Vec<Vec<usize>>,
}

impl PointerAssignment {
    /// Builds an assignment from per-box columns and per-tag empty flags.
    /// A tag that any box selected is never empty.
    pub fn new(box_to_tag: Vec<usize>, mut empty: Vec<bool>) -> Result<Self, PointerError> {
        let mut tag_boxes = vec![Vec::new(); empty.len()];
        for (j, &m) in box_to_tag.iter().enumerate() {
            let Some(list) = tag_boxes.get_mut(m) else {
                return Err(PointerError::TargetOutOfRange {
                    row: j,
                    target: m,
                    columns: empty.len(),
                });
            };
            list.push(j);
            empty[m] = false;
        }
        Ok(Self {
            box_to_tag,
            empty,
            tag_boxes,
        })
    }

    pub fn box_to_tag(&self) -> &[usize] {
        &self.box_to_tag
    }

    pub fn empty_flags(&self) -> &[bool] {
        &self.empty
    }

    pub fn tag_boxes(&self) -> &[Vec<usize>] {
        &self.tag_boxes
    }

    pub fn n_tags(&self) -> usize {
        self.empty.len()
    }

    /// Indices of the tags flagged empty.
    pub fn empty_tags(&self) -> Vec<usize> {
        self.empty
            .iter()
            .enumerate()
            .filter(|(_, &e)| e)
            .map(|(i, _)| i)
            .collect()
    }
}

impl Serialize for PointerAssignment {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("PointerAssignment", 2)?;
        s.serialize_field("box_to_tag", &self.box_to_tag)?;
        s.serialize_field("empty_tags", &self.empty_tags())?;
        s.end()
    }
}

/// Argmax per box (lowest column on ties); a tag is empty when its score is
/// above 0.5 and no box chose it.
pub fn resolve_pointers(
    logits: &FeatureMatrix,
    empty_scores: &[f64],
    layout: &SequenceLayout,
) -> Result<PointerAssignment, PointerError> {
    if logits.rows() != layout.n_real() {
        return Err(PointerError::ShapeMismatch(format!(
            "{} logit rows for {} real boxes",
            logits.rows(),
            layout.n_real()
        )));
    }
    if logits.dim() != empty_scores.len() {
        return Err(PointerError::ShapeMismatch(format!(
            "{} logit columns for {} empty scores",
            logits.dim(),
            empty_scores.len()
        )));
    }
    let box_to_tag = (0..logits.rows())
        .map(|j| {
            let row = logits.row(j);
            let mut best = 0;
            for (m, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = m;
                }
            }
            best
        })
        .collect();
    PointerAssignment::new(box_to_tag, empty_scores.iter().map(|&s| s > 0.5).collect())
}

/// Final table: the decoded structure with each cell's text set to the texts
/// of its boxes, in box order, joined by single spaces.
pub fn assemble_table(
    seq: &OtslSequence,
    assignment: &PointerAssignment,
    texts: &[impl AsRef<str>],
) -> Result<HtmlTree, PointerError> {
    let d = data_tag_indices(seq);
    if d.len() != assignment.n_tags() {
        return Err(PointerError::CountMismatch(format!(
            "sequence has {} data tags, assignment has {}",
            d.len(),
            assignment.n_tags()
        )));
    }
    if texts.len() != assignment.box_to_tag.len() {
        return Err(PointerError::CountMismatch(format!(
            "{} texts for {} boxes",
            texts.len(),
            assignment.box_to_tag.len()
        )));
    }
    let grid = otsl_to_grid(seq)?;
    // Data tags and grid cells share row-major anchor order.
    let contents = assignment
        .tag_boxes
        .iter()
        .map(|boxes| boxes.iter().map(|&j| texts[j].as_ref()).collect::<Vec<_>>().join(" "));
    Ok(fill_cells(&grid, contents))
}
