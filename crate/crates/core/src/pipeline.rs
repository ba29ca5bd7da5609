//! End-to-end composition: features of a corpus sample through the optional
//! layout filter, the pointer heads and table assembly, plus the full loss
//! breakdown for one sample.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{HtmlTree, OtslSequence, OtslToken};
use crate::contrastive::{positive_sets, span_contrastive_loss, ContrastiveError, SpanAxis};
use crate::corpus::{oracle_features, oracle_filter_params, CorpusError, CorpusSample, SampleFeatures};
use crate::filter::{
    apply_mask, filter_mask, filter_scores, greedy_and_selective_baselines, FilterError, FilterParams,
};
use crate::filter::{GREEDY_IOU, SELECTIVE_IOU};
use crate::losses::{combined_loss, tag_classification_loss, LossComponents, LossError, LossWeights, TagLogits};
use crate::matrix::{FeatureMatrix, MatrixError};
use crate::pointer::{
    assemble_table, build_sequence_layout, empty_pointer_loss, empty_scores, pointer_logits, pointer_loss, project,
    resolve_pointers, split_hidden, PointerAssignment, PointerError, ProjectionMatrix, Temperature,
};
use crate::teds::{score_pair, TedsError, TedsScores};

/// Default oracle margin on feature dot products.
pub const DEFAULT_MARGIN: f64 = 10.0;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Pointer(#[from] PointerError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Contrastive(#[from] ContrastiveError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Teds(#[from] TedsError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterMode {
    /// Every box reaches the pointer.
    Off,
    Params(FilterParams),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineOutput {
    pub assignment: PointerAssignment,
    #[serde(serialize_with = "as_html")]
    pub html: HtmlTree,
    pub scores: TedsScores,
    pub kept_boxes: usize,
}

fn as_html<S: serde::Serializer>(tree: &HtmlTree, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&tree.to_html())
}

struct Projected {
    boxes: FeatureMatrix,
    tags: FeatureMatrix,
}

fn project_all(
    boxes: &FeatureMatrix,
    tags: &FeatureMatrix,
    features: &SampleFeatures,
) -> Result<Projected, PipelineError> {
    Ok(Projected {
        boxes: project(boxes, &features.box_projection)?,
        tags: project(tags, &features.tag_projection)?,
    })
}

/// Filter (on raw box features), project, point and assemble; scored
/// against the sample's ground truth.
pub fn run_pipeline(
    sample: &CorpusSample,
    features: &SampleFeatures,
    filter: &FilterMode,
    tau: Temperature,
) -> Result<PipelineOutput, PipelineError> {
    let (box_block, tags) = split_hidden(&features.hidden, &sample.layout, sample.otsl.len())?;
    let special = box_block.slice_rows(0..1);
    let real = sample.layout.real_rows(&box_block)?;
    let (kept, kept_ann) = match filter {
        FilterMode::Off => (real, sample.annotations.clone()),
        FilterMode::Params(params) => {
            let mask = filter_mask(&filter_scores(&real, params)?);
            apply_mask(&real, &sample.annotations, &mask)?
        }
    };
    let p = project_all(&special.vstack(&kept)?, &tags, features)?;
    let d = sample.data_tags();
    let layout = build_sequence_layout(kept.rows(), sample.layout.box_slots())?;
    let logits = pointer_logits(&p.boxes.slice_rows(1..1 + kept.rows()), &p.tags, &d, tau)?;
    let empty = empty_scores(p.boxes.row(0), &p.tags, &d)?;
    let assignment = resolve_pointers(&logits, &empty, &layout)?;
    let texts: Vec<&str> = kept_ann.boxes.iter().map(|b| b.text.as_str()).collect();
    let html = assemble_table(&sample.otsl, &assignment, &texts)?;
    let scores = score_pair(&html, &sample.html_gt)?;
    Ok(PipelineOutput {
        assignment,
        html,
        scores,
        kept_boxes: kept.rows(),
    })
}

/// [`run_pipeline`] on [`oracle_features`], filtering with the oracle filter
/// when `filtered` is set.
pub fn run_oracle_pipeline(
    sample: &CorpusSample,
    d: usize,
    margin: f64,
    tau: Temperature,
    filtered: bool,
) -> Result<PipelineOutput, PipelineError> {
    let features = oracle_features(sample, d, margin)?;
    let mode = if filtered {
        FilterMode::Params(oracle_filter_params(sample.data_tags().len(), d, margin)?)
    } else {
        FilterMode::Off
    };
    run_pipeline(sample, &features, &mode, tau)
}

/// Mean scores of the IOU baselines and the filtered oracle pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterComparison {
    pub samples: usize,
    pub distractors: usize,
    pub greedy: TedsScores,
    pub selective: TedsScores,
    pub unfiltered: TedsScores,
    pub filtered: TedsScores,
}

#[derive(Default)]
struct Mean {
    teds: f64,
    teds_struct: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, s: TedsScores) {
        self.teds += s.teds;
        self.teds_struct += s.teds_struct;
        self.n += 1;
    }

    fn get(&self) -> TedsScores {
        let n = self.n.max(1) as f64;
        TedsScores {
            teds: self.teds / n,
            teds_struct: self.teds_struct / n,
        }
    }
}

/// Compares the greedy and selective baselines with the pointer pipeline,
/// unfiltered and filtered by `params` (the oracle filter when `None`).
pub fn compare_filters(
    samples: &[CorpusSample],
    d: usize,
    margin: f64,
    tau: Temperature,
    params: Option<&FilterParams>,
) -> Result<FilterComparison, PipelineError> {
    let (mut greedy, mut selective, mut unfiltered, mut filtered) =
        (Mean::default(), Mean::default(), Mean::default(), Mean::default());
    let mut distractors = 0;
    for s in samples {
        distractors += s.annotations.distractor_count();
        for (mean, t) in [(&mut greedy, GREEDY_IOU), (&mut selective, SELECTIVE_IOU)] {
            let tree = greedy_and_selective_baselines(&s.grid, &s.annotations, t);
            mean.add(score_pair(&tree, &s.html_gt)?);
        }
        let features = oracle_features(s, d, margin)?;
        unfiltered.add(run_pipeline(s, &features, &FilterMode::Off, tau)?.scores);
        let p = match params {
            Some(p) => p.clone(),
            None => oracle_filter_params(s.data_tags().len(), d, margin)?,
        };
        filtered.add(run_pipeline(s, &features, &FilterMode::Params(p), tau)?.scores);
    }
    Ok(FilterComparison {
        samples: samples.len(),
        distractors,
        greedy: greedy.get(),
        selective: selective.get(),
        unfiltered: unfiltered.get(),
        filtered: filtered.get(),
    })
}

pub fn token_id(t: OtslToken) -> usize {
    match t {
        OtslToken::C => 0,
        OtslToken::L => 1,
        OtslToken::U => 2,
        OtslToken::X => 3,
        OtslToken::NL => 4,
    }
}

/// Vocabulary logits scoring `margin` on each position's true token.
pub fn oracle_tag_logits(seq: &OtslSequence, margin: f64) -> TagLogits {
    let tokens = seq.tokens();
    let mut logits = FeatureMatrix::zeros(tokens.len(), 5);
    let targets: Vec<usize> = tokens.iter().map(|&t| token_id(t)).collect();
    for (k, &id) in targets.iter().enumerate() {
        logits.set(k, id, margin);
    }
    TagLogits::new(logits, targets).expect("ids are in range")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub components: LossComponents,
    pub weights: LossWeights,
    pub combined: f64,
}

pub fn report(components: LossComponents, weights: LossWeights) -> Result<LossReport, PipelineError> {
    Ok(LossReport {
        combined: combined_loss(&components, &weights)?,
        components,
        weights,
    })
}

/// Every objective term for one sample. Distractor boxes are left out of the
/// pointer and contrastive terms; `contrastive_projection` maps raw box
/// features to contrastive embeddings.
pub fn evaluate_losses(
    sample: &CorpusSample,
    features: &SampleFeatures,
    tag_logits: &TagLogits,
    contrastive_projection: &ProjectionMatrix,
    tau: Temperature,
    weights: LossWeights,
) -> Result<LossReport, PipelineError> {
    let (box_block, tags) = split_hidden(&features.hidden, &sample.layout, sample.otsl.len())?;
    let real = sample.layout.real_rows(&box_block)?;
    let p = project_all(&box_block, &tags, features)?;
    let d = sample.data_tags();

    let labeled: Vec<usize> = (0..sample.annotations.len())
        .filter(|&j| sample.pointer_labels[j].is_some())
        .collect();
    let targets: Vec<usize> = labeled
        .iter()
        .map(|&j| {
            d.column_of(sample.pointer_labels[j].expect("labeled"))
                .expect("label is a data tag")
        })
        .collect();
    let real_proj = sample.layout.real_rows(&p.boxes)?;
    let logits = pointer_logits(&real_proj.select_rows(&labeled), &p.tags, &d, tau)?;
    let ptr = pointer_loss(&logits, &targets)?.loss;
    let ptr_empty = empty_pointer_loss(p.boxes.row(0), &p.tags, &d, &sample.empty_labels)?.loss;

    let embeddings = project(&real, contrastive_projection)?;
    let contr = |axis| -> Result<f64, PipelineError> {
        let sets = positive_sets(&sample.grid, &sample.annotations, axis)?;
        Ok(span_contrastive_loss(&embeddings, &sets, tau)?.mean)
    };
    let components = LossComponents {
        cls: tag_classification_loss(tag_logits).loss,
        ptr,
        ptr_empty,
        contr_row: contr(SpanAxis::Row)?,
        contr_col: contr(SpanAxis::Column)?,
    };
    report(components, weights)
}
