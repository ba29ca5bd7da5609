//! Tag classification loss, the weighted training objective and a central
//! finite-difference gradient estimator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{log_sum_exp, FeatureMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("target {target} at position {position} is outside a vocabulary of {vocab}")]
    TargetOutOfRange {
        position: usize,
        target: usize,
        vocab: usize,
    },
    #[error("{logits} logit rows for {targets} targets")]
    ShapeMismatch { logits: usize, targets: usize },
    #[error("loss component `{0}` is not finite")]
    NonFiniteComponent(&'static str),
    #[error("weight `{0}` must be finite and non-negative")]
    InvalidWeight(&'static str),
    #[error("function evaluated to a non-finite value at coordinate {0}")]
    NonFiniteEvaluation(usize),
    #[error("step size must be positive and finite")]
    InvalidStep,
}

/// Per-position vocabulary logits and their target token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TagLogits {
    logits: FeatureMatrix,
    targets: Vec<usize>,
}

impl TagLogits {
    pub fn new(logits: FeatureMatrix, targets: Vec<usize>) -> Result<Self, LossError> {
        if logits.rows() != targets.len() {
            return Err(LossError::ShapeMismatch {
                logits: logits.rows(),
                targets: targets.len(),
            });
        }
        let vocab = logits.dim();
        if let Some((position, &target)) = targets.iter().enumerate().find(|(_, &t)| t >= vocab) {
            return Err(LossError::TargetOutOfRange {
                position,
                target,
                vocab,
            });
        }
        Ok(Self { logits, targets })
    }

    pub fn logits(&self) -> &FeatureMatrix {
        &self.logits
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn vocab(&self) -> usize {
        self.logits.dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationLoss {
    pub loss: f64,
    pub grad: FeatureMatrix,
}

/// Mean cross-entropy over positions. Zero positions give a zero loss.
pub fn tag_classification_loss(logits: &TagLogits) -> ClassificationLoss {
    let m = &logits.logits;
    let t = m.rows();
    let mut grad = FeatureMatrix::zeros(t, m.dim());
    if t == 0 {
        return ClassificationLoss { loss: 0.0, grad };
    }
    let scale = 1.0 / t as f64;
    let mut total = 0.0;
    for (k, &target) in logits.targets.iter().enumerate() {
        let row = m.row(k);
        let lse = log_sum_exp(row.iter().copied());
        total += lse - row[target];
        let g = grad.row_mut(k);
        for (gi, &z) in g.iter_mut().zip(row) {
            *gi = (z - lse).exp() * scale;
        }
        g[target] -= scale;
    }
    ClassificationLoss {
        loss: total * scale,
        grad,
    }
}

/// Objective weights `λ1..λ5` for classification, pointer, empty pointer,
/// row contrastive and column contrastive terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub ptr: f64,
    pub ptr_empty: f64,
    pub contr_row: f64,
    pub contr_col: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 1.0,
            ptr: 1.0,
            ptr_empty: 1.0,
            contr_row: 0.5,
            contr_col: 0.5,
        }
    }
}

impl LossWeights {
    pub fn new(cls: f64, ptr: f64, ptr_empty: f64, contr_row: f64, contr_col: f64) -> Result<Self, LossError> {
        let w = Self {
            cls,
            ptr,
            ptr_empty,
            contr_row,
            contr_col,
        };
        for (name, v) in w.named() {
            if !v.is_finite() || v < 0.0 {
                return Err(LossError::InvalidWeight(name));
            }
        }
        Ok(w)
    }

    /// Weights without the contrastive terms.
    pub fn base() -> Self {
        Self {
            contr_row: 0.0,
            contr_col: 0.0,
            ..Self::default()
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.cls, self.ptr, self.ptr_empty, self.contr_row, self.contr_col]
    }

    fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("cls", self.cls),
            ("ptr", self.ptr),
            ("ptr_empty", self.ptr_empty),
            ("contr_row", self.contr_row),
            ("contr_col", self.contr_col),
        ]
    }
}

/// Individual objective terms, contrastive ones already averaged over boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub cls: f64,
    pub ptr: f64,
    pub ptr_empty: f64,
    pub contr_row: f64,
    pub contr_col: f64,
}

impl LossComponents {
    pub fn splat(v: f64) -> Self {
        Self {
            cls: v,
            ptr: v,
            ptr_empty: v,
            contr_row: v,
            contr_col: v,
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.cls, self.ptr, self.ptr_empty, self.contr_row, self.contr_col]
    }
}

pub fn combined_loss(c: &LossComponents, w: &LossWeights) -> Result<f64, LossError> {
    const NAMES: [&str; 5] = ["cls", "ptr", "ptr_empty", "contr_row", "contr_col"];
    let values = c.as_array();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(LossError::NonFiniteComponent(NAMES[i]));
    }
    Ok(values.iter().zip(w.as_array()).map(|(v, w)| v * w).sum())
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate of `x`.
pub fn finite_diff_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>, LossError>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(LossError::InvalidStep);
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(LossError::NonFiniteEvaluation(i));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both are zero vectors.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
