//! Span-aware contrastive supervision over box embeddings.
//!
//! For a box `j`, the candidates `A(j)` are all other non-distractor boxes and
//! the positives `P(j)` are those whose target cells share at least one grid
//! row (row axis) or column (column axis) with `j`'s target cell. Each
//! positive is weighted by
//!
//! ```text
//! c_p(j) = overlap(p, j)² / (span(p) · span(j))
//! ```
//!
//! where `span` and `overlap` count grid lines along the axis. With every
//! coefficient fixed to 1 the loss is the plain supervised contrastive loss.

use thiserror::Error;

use crate::matrix::{axpy, dot, log_sum_exp, FeatureMatrix};
use crate::model::{CellAnnotations, CellSpec, TableGrid};
use crate::pointer::Temperature;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContrastiveError {
    #[error("box {0} has a target cell that does not exist")]
    UnlabeledBox(usize),
    #[error("cells do not overlap on the {0:?} axis")]
    NoOverlap(SpanAxis),
    #[error("box {0} has positives but no candidates")]
    DegenerateSets(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpanAxis {
    Row,
    Column,
}

impl SpanAxis {
    fn interval(self, cell: &CellSpec) -> (usize, usize) {
        match self {
            SpanAxis::Row => (cell.anchor_row, cell.anchor_row + cell.rowspan),
            SpanAxis::Column => (cell.anchor_col, cell.anchor_col + cell.colspan),
        }
    }
}

/// Number of grid lines the two cells share along `axis`.
pub fn overlap(a: &CellSpec, b: &CellSpec, axis: SpanAxis) -> usize {
    let (a0, a1) = axis.interval(a);
    let (b0, b1) = axis.interval(b);
    a1.min(b1).saturating_sub(a0.max(b0))
}

pub fn span_coefficient(p_cell: &CellSpec, j_cell: &CellSpec, axis: SpanAxis) -> Result<f64, ContrastiveError> {
    let shared = overlap(p_cell, j_cell, axis);
    if shared == 0 {
        return Err(ContrastiveError::NoOverlap(axis));
    }
    let span = |c: &CellSpec| {
        let (lo, hi) = axis.interval(c);
        (hi - lo) as f64
    };
    Ok((shared * shared) as f64 / (span(p_cell) * span(j_cell)))
}

/// Candidate and positive sets for every annotation box.
///
/// Box indices refer to positions in the annotation list (and so to rows of
/// the embedding matrix). Distractor boxes belong to no set.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveSets {
    members: Vec<usize>,
    positives: Vec<Vec<(usize, f64)>>,
}

impl ContrastiveSets {
    /// Boxes taking part, ascending. `A(j)` is this list without `j`.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn n_boxes(&self) -> usize {
        self.positives.len()
    }

    /// `A(j)`
    pub fn candidates(&self, j: usize) -> Vec<usize> {
        if !self.members.contains(&j) {
            return Vec::new();
        }
        self.members.iter().copied().filter(|&a| a != j).collect()
    }

    /// `P(j)` with coefficients `c_p(j)`.
    pub fn positives(&self, j: usize) -> &[(usize, f64)] {
        &self.positives[j]
    }

    /// Copy with every coefficient set to 1.
    pub fn uniform(&self) -> Self {
        Self {
            members: self.members.clone(),
            positives: self
                .positives
                .iter()
                .map(|ps| ps.iter().map(|&(p, _)| (p, 1.0)).collect())
                .collect(),
        }
    }
}

pub fn positive_sets(
    grid: &TableGrid,
    annotations: &CellAnnotations,
    axis: SpanAxis,
) -> Result<ContrastiveSets, ContrastiveError> {
    let mut members = Vec::new();
    let mut cells = Vec::new();
    for (i, b) in annotations.boxes.iter().enumerate() {
        if let Some(t) = b.target() {
            let cell = grid.cells().get(t).ok_or(ContrastiveError::UnlabeledBox(i))?;
            members.push(i);
            cells.push(cell);
        }
    }
    let mut positives = vec![Vec::new(); annotations.len()];
    for (a, &j) in members.iter().enumerate() {
        for (b, &p) in members.iter().enumerate() {
            if a != b && overlap(cells[a], cells[b], axis) > 0 {
                positives[j].push((p, span_coefficient(cells[b], cells[a], axis)?));
            }
        }
    }
    Ok(ContrastiveSets { members, positives })
}

/// Per-box losses, their mean over boxes with positives, and the gradient of
/// that mean with respect to the embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveLoss {
    /// `L_j`; zero for boxes without positives.
    pub per_box: Vec<f64>,
    pub mean: f64,
    /// Number of boxes entering the mean.
    pub counted: usize,
    pub grad: FeatureMatrix,
}

/// Span-weighted supervised contrastive loss.
///
/// Boxes with an empty `P(j)` contribute 0 and are left out of the mean.
/// Terms are reduced in ascending box order.
#[allow(clippy::needless_range_loop)]
pub fn span_contrastive_loss(
    embeddings: &FeatureMatrix,
    sets: &ContrastiveSets,
    tau: Temperature,
) -> Result<ContrastiveLoss, ContrastiveError> {
    if embeddings.rows() != sets.n_boxes() {
        return Err(ContrastiveError::ShapeMismatch(format!(
            "{} embeddings for {} boxes",
            embeddings.rows(),
            sets.n_boxes()
        )));
    }
    let inv_tau = 1.0 / tau.value();
    let n = sets.n_boxes();
    let mut per_box = vec![0.0; n];
    let mut grad = FeatureMatrix::zeros(n, embeddings.dim());
    // Per-box gradients are accumulated unscaled, then divided by `counted`.
    let mut counted = 0;
    let mut candidate_weight = vec![0.0; n];
    for j in 0..n {
        let positives = sets.positives(j);
        if positives.is_empty() {
            continue;
        }
        let candidates = sets.candidates(j);
        if candidates.is_empty() {
            return Err(ContrastiveError::DegenerateSets(j));
        }
        counted += 1;
        let anchor = embeddings.row(j);
        let logits: Vec<f64> = candidates
            .iter()
            .map(|&a| dot(anchor, embeddings.row(a)) * inv_tau)
            .collect();
        let lse = log_sum_exp(logits.iter().copied());
        let total_c: f64 = positives.iter().map(|&(_, c)| c).sum();

        for &a in &candidates {
            candidate_weight[a] = 0.0;
        }
        let mut loss = 0.0;
        for &(p, c) in positives {
            let s = dot(anchor, embeddings.row(p)) * inv_tau;
            loss += c * (s - lse);
            candidate_weight[p] += c / total_c;
        }
        per_box[j] = -loss / total_c;

        // d L_j / d s_a = softmax_a - w_a, with s_a = <b_j, b_a> / τ.
        for (&a, &s) in candidates.iter().zip(&logits) {
            let g = ((s - lse).exp() - candidate_weight[a]) * inv_tau;
            let row_a = embeddings.row(a).to_vec();
            axpy(grad.row_mut(j), g, &row_a);
            axpy(grad.row_mut(a), g, anchor);
        }
    }
    let mean = if counted == 0 {
        0.0
    } else {
        per_box.iter().sum::<f64>() / counted as f64
    };
    if counted > 0 {
        let scale = 1.0 / counted as f64;
        grad.values_mut().iter_mut().for_each(|g| *g *= scale);
    }
    Ok(ContrastiveLoss {
        per_box,
        mean,
        counted,
        grad,
    })
}

/// [`span_contrastive_loss`] with every coefficient forced to 1.
pub fn uniform_contrastive_loss(
    embeddings: &FeatureMatrix,
    sets: &ContrastiveSets,
    tau: Temperature,
) -> Result<ContrastiveLoss, ContrastiveError> {
    span_contrastive_loss(embeddings, &sets.uniform(), tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnnotatedBox, BBox};

    fn bx(cell: usize) -> AnnotatedBox {
        AnnotatedBox::targeted(BBox::new(0.0, 0.0, 0.1, 0.1).unwrap(), "x", cell)
    }

    fn filled(cells: Vec<CellSpec>) -> Vec<CellSpec> {
        cells.into_iter().map(|c| c.with_content("x")).collect()
    }

    #[test]
    fn coefficients() {
        let wide = CellSpec::new(0, 0, 1, 2);
        let narrow = CellSpec::new(1, 1, 1, 1);
        assert_eq!(span_coefficient(&wide, &narrow, SpanAxis::Column).unwrap(), 0.5);
        assert_eq!(span_coefficient(&narrow, &wide, SpanAxis::Column).unwrap(), 0.5);
        let a = CellSpec::new(0, 0, 1, 3);
        let b = CellSpec::new(1, 1, 1, 2);
        assert!((span_coefficient(&a, &b, SpanAxis::Column).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let s = CellSpec::new(0, 2, 3, 2);
        assert_eq!(span_coefficient(&s, &s, SpanAxis::Row).unwrap(), 1.0);
        assert_eq!(
            span_coefficient(&wide, &CellSpec::new(1, 2, 1, 1), SpanAxis::Column),
            Err(ContrastiveError::NoOverlap(SpanAxis::Column))
        );
    }

    #[test]
    fn simple_rows_pair_up() {
        let g = TableGrid::new(2, 2, filled((0..4).map(|i| CellSpec::simple(i / 2, i % 2)).collect())).unwrap();
        let ann = CellAnnotations::new((0..4).map(bx).collect());
        let rows = positive_sets(&g, &ann, SpanAxis::Row).unwrap();
        assert_eq!(rows.positives(0), &[(1, 1.0)]);
        assert_eq!(rows.positives(3), &[(2, 1.0)]);
        let cols = positive_sets(&g, &ann, SpanAxis::Column).unwrap();
        assert_eq!(cols.positives(0), &[(2, 1.0)]);
        assert_eq!(cols.candidates(0), vec![1, 2, 3]);
    }

    #[test]
    fn partial_and_full_overlap_are_positive() {
        // Box 0 is a header over columns 0..2. The simple cells below it
        // overlap partially, the spanning cell in row 2 fully.
        let g = TableGrid::new(
            3,
            3,
            filled(vec![
                CellSpec::new(0, 0, 1, 2),
                CellSpec::simple(0, 2),
                CellSpec::simple(1, 0),
                CellSpec::simple(1, 1),
                CellSpec::simple(1, 2),
                CellSpec::new(2, 0, 1, 2),
                CellSpec::simple(2, 2),
            ]),
        )
        .unwrap();
        let ann = CellAnnotations::new((0..7).map(bx).collect());
        let sets = positive_sets(&g, &ann, SpanAxis::Column).unwrap();
        let pos: Vec<usize> = sets.positives(0).iter().map(|p| p.0).collect();
        assert_eq!(pos, vec![2, 3, 5]);
        assert_eq!(sets.positives(0)[0].1, 0.5);
        assert_eq!(sets.positives(0)[2].1, 1.0);
        assert!(!pos.contains(&4));
    }

    #[test]
    fn single_box_has_no_pairs() {
        let g = TableGrid::new(1, 1, filled(vec![CellSpec::simple(0, 0)])).unwrap();
        let ann = CellAnnotations::new(vec![bx(0)]);
        let sets = positive_sets(&g, &ann, SpanAxis::Row).unwrap();
        assert!(sets.positives(0).is_empty());
        assert!(sets.candidates(0).is_empty());
        let loss = span_contrastive_loss(&FeatureMatrix::zeros(1, 2), &sets, Temperature::default()).unwrap();
        assert_eq!((loss.mean, loss.counted), (0.0, 0));
    }

    #[test]
    fn distractors_are_excluded() {
        let g = TableGrid::new(1, 2, filled(vec![CellSpec::simple(0, 0), CellSpec::simple(0, 1)])).unwrap();
        let ann = CellAnnotations::new(vec![
            bx(0),
            AnnotatedBox::distractor(BBox::new(0.0, 0.0, 0.1, 0.1).unwrap(), "Draft"),
            bx(1),
        ]);
        let sets = positive_sets(&g, &ann, SpanAxis::Row).unwrap();
        assert_eq!(sets.members(), &[0, 2]);
        assert_eq!(sets.positives(0), &[(2, 1.0)]);
        assert!(sets.positives(1).is_empty());
        assert!(sets.candidates(1).is_empty());
    }

    #[test]
    fn closed_form_losses() {
        let tau = Temperature::new(1.0).unwrap();
        // Two mutual positives: the softmax has one candidate.
        let sets = ContrastiveSets {
            members: vec![0, 1],
            positives: vec![vec![(1, 1.0)], vec![(0, 1.0)]],
        };
        let e = FeatureMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(span_contrastive_loss(&e, &sets, tau).unwrap().mean.abs() < 1e-15);

        // Unit basis vectors, P(0) = {1}, A(0) = {1, 2}.
        let sets = ContrastiveSets {
            members: vec![0, 1, 2],
            positives: vec![vec![(1, 1.0)], vec![], vec![]],
        };
        let e = FeatureMatrix::identity(3);
        let l = span_contrastive_loss(&e, &sets, tau).unwrap();
        assert!((l.per_box[0] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(l.counted, 1);
    }

    #[test]
    fn weights_normalize() {
        let g = TableGrid::new(
            2,
            3,
            filled(vec![
                CellSpec::new(0, 0, 1, 3),
                CellSpec::simple(1, 0),
                CellSpec::new(1, 1, 1, 2),
            ]),
        )
        .unwrap();
        let ann = CellAnnotations::new((0..3).map(bx).collect());
        let sets = positive_sets(&g, &ann, SpanAxis::Column).unwrap();
        for j in 0..3 {
            let total: f64 = sets.positives(j).iter().map(|p| p.1).sum();
            let normalized: f64 = sets.positives(j).iter().map(|p| p.1 / total).sum();
            assert!((normalized - 1.0).abs() < 1e-15);
        }
        assert_eq!(sets.positives(0), &[(1, 1.0 / 3.0), (2, 4.0 / 6.0)]);
    }
}
