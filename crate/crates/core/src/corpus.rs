//! Synthetic table corpus: random grids, text-region boxes, watermark
//! distractors and oracle feature matrices.
//!
//! Each sample draws from its own ChaCha stream keyed by `(seed, index)`, so
//! a corpus is byte-identical however it is generated.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{data_tag_indices, grid_to_html, grid_to_otsl, otsl_parse, parse_html, HtmlTree, OtslSequence};
use crate::filter::FilterParams;
use crate::matrix::FeatureMatrix;
use crate::model::{AnnotatedBox, BBox, CellAnnotations, CellSpec, TableGrid};
use crate::pointer::{build_sequence_layout, PointerError, ProjectionMatrix, SequenceLayout};

pub const FORMAT_VERSION: u32 = 1;

pub const WATERMARK_SHORT: &[&str] = &[
    "Draft", "Final", "Copy", "Legal", "Alert", "Audit", "Proof", "Valid", "Stamp", "Issue", "Bonus", "Check", "Title",
    "Specs", "Photo", "Chart", "Trial", "Claim", "Code", "Quote",
];

pub const WATERMARK_MEDIUM: &[&str] = &[
    "Approved",
    "Reviewed",
    "Reserved",
    "Released",
    "Received",
    "Rejected",
    "Verified",
    "Original",
    "Recorded",
    "Canceled",
    "Internal",
    "External",
    "Modified",
    "Drafting",
    "Proposal",
    "Expiring",
    "Amended",
    "Corrected",
    "Invoice",
    "Template",
    "Archived",
    "Secure",
    "Private",
    "Contract",
    "Warranty",
    "Training",
    "Briefing",
    "Guidance",
    "Exhibit",
];

pub const WATERMARK_LONG: &[&str] = &[
    "Unauthorized",
    "Preliminary",
    "Confidential",
    "For Review",
    "For Approval",
    "Restricted",
    "Do Not Copy",
    "Not Final",
    "Intellectual",
    "Property",
    "For Comment",
    "Draft Version",
    "Superseded",
    "Information",
    "Classified",
    "Validation",
    "Obsolete",
    "Assessment",
    "Watermarked",
    "Benchmark",
    "Evaluation",
    "Disclaimer",
    "For Internal Use",
    "Duplicated",
    "For Reference",
    "Instructor Copy",
    "Registration",
    "For Attention",
    "For Distribution",
    "Certification",
];

/// Fraction of a cell's width and height left blank on each side.
const CELL_INSET: f64 = 0.03;
const WATERMARK_ATTEMPTS: usize = 64;
const SPAN_ATTEMPTS: usize = 4;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
    #[error("feature dimension {got} is too small, need at least {required}")]
    DimensionTooSmall { required: usize, got: usize },
    #[error("oracle margin must be positive and finite, got {0}")]
    InvalidMargin(f64),
    #[error("inconsistent sample: {0}")]
    Inconsistent(String),
    #[error("line {line}: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Pointer(#[from] PointerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WatermarkConfig {
    pub enabled: bool,
    pub probability: f64,
    pub min_iou: f64,
}

impl Default for WatermarkConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            probability: 0.2,
            min_iou: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub max_rows: usize,
    pub max_cols: usize,
    pub span_probability: f64,
    pub max_span: usize,
    pub empty_cell_probability: f64,
    /// Boxes per non-empty cell are uniform on `1..=max_boxes_per_cell`.
    pub max_boxes_per_cell: usize,
    pub watermark: WatermarkConfig,
    pub feature_dim: usize,
    pub box_slots: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_samples: 100,
            max_rows: 8,
            max_cols: 6,
            span_probability: 0.2,
            max_span: 3,
            empty_cell_probability: 0.1,
            max_boxes_per_cell: 3,
            watermark: WatermarkConfig::default(),
            feature_dim: 64,
            box_slots: 640,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidConfig(m));
        for (name, p) in [
            ("span_probability", self.span_probability),
            ("empty_cell_probability", self.empty_cell_probability),
            ("watermark.probability", self.watermark.probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.watermark.min_iou > 0.0 && self.watermark.min_iou <= 1.0) {
            return bad(format!(
                "watermark.min_iou must lie in (0, 1], got {}",
                self.watermark.min_iou
            ));
        }
        if self.max_rows == 0 || self.max_cols == 0 {
            return bad("max_rows and max_cols must be positive".into());
        }
        if self.span_probability > 0.0 && self.max_span < 2 {
            return bad("max_span must be at least 2 when spans are enabled".into());
        }
        if self.max_boxes_per_cell == 0 {
            return bad("max_boxes_per_cell must be positive".into());
        }
        let per_box = if self.watermark.enabled { 2 } else { 1 };
        let worst = self.max_rows * self.max_cols * self.max_boxes_per_cell * per_box;
        if worst + 1 > self.box_slots {
            return bad(format!(
                "up to {worst} boxes plus the special slot may not fit in {} box slots",
                self.box_slots
            ));
        }
        let worst_tags = self.max_rows * self.max_cols;
        if self.feature_dim < worst_tags + 2 {
            return Err(CorpusError::DimensionTooSmall {
                required: worst_tags + 2,
                got: self.feature_dim,
            });
        }
        Ok(())
    }
}

/// The RNG for sample `index` of a corpus seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn random_word<R: Rng>(rng: &mut R) -> String {
    let len = rng.gen_range(2..=8);
    (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

/// A random valid grid. Non-empty cells hold `1..=max_boxes_per_cell`
/// space-separated words, one per future text box.
pub fn generate_grid<R: Rng>(rng: &mut R, config: &CorpusConfig) -> TableGrid {
    let n_rows = rng.gen_range(1..=config.max_rows);
    let n_cols = rng.gen_range(1..=config.max_cols);
    let mut taken = vec![false; n_rows * n_cols];
    let mut cells = Vec::new();
    for r in 0..n_rows {
        for c in 0..n_cols {
            if taken[r * n_cols + c] {
                continue;
            }
            let (mut rs, mut cs) = (1, 1);
            if config.span_probability > 0.0 && rng.gen_bool(config.span_probability) {
                for _ in 0..SPAN_ATTEMPTS {
                    let want_r = rng.gen_range(1..=config.max_span).min(n_rows - r);
                    let want_c = rng.gen_range(1..=config.max_span).min(n_cols - c);
                    if (want_r, want_c) == (1, 1) {
                        continue;
                    }
                    let free = (r..r + want_r).all(|rr| (c..c + want_c).all(|cc| !taken[rr * n_cols + cc]));
                    if free {
                        (rs, cs) = (want_r, want_c);
                        break;
                    }
                }
            }
            for rr in r..r + rs {
                for cc in c..c + cs {
                    taken[rr * n_cols + cc] = true;
                }
            }
            let mut cell = CellSpec::new(r, c, rs, cs);
            if !rng.gen_bool(config.empty_cell_probability) {
                let k = rng.gen_range(1..=config.max_boxes_per_cell);
                let words: Vec<String> = (0..k).map(|_| random_word(rng)).collect();
                cell = cell.with_content(words.join(" "));
            }
            cells.push(cell);
        }
    }
    TableGrid::new(n_rows, n_cols, cells).expect("generator produces a tiling")
}

/// Area of `cell` on a uniform `n_rows × n_cols` layout of the unit square.
fn cell_rect(grid: &TableGrid, cell: &CellSpec) -> [f64; 4] {
    let (w, h) = (1.0 / grid.n_cols() as f64, 1.0 / grid.n_rows() as f64);
    [
        cell.anchor_col as f64 * w,
        cell.anchor_row as f64 * h,
        (cell.anchor_col + cell.colspan) as f64 * w,
        (cell.anchor_row + cell.rowspan) as f64 * h,
    ]
}

/// One box per word of every non-empty cell, stacked top to bottom inside
/// the cell, in reading order of their top-left corners.
pub fn generate_annotations<R: Rng>(rng: &mut R, grid: &TableGrid) -> CellAnnotations {
    let mut boxes = Vec::new();
    for (i, cell) in grid.cells().iter().enumerate() {
        let Some(text) = &cell.content else { continue };
        let words: Vec<&str> = text.split(' ').collect();
        let [x0, y0, x1, y1] = cell_rect(grid, cell);
        let (ix, iy) = ((x1 - x0) * CELL_INSET, (y1 - y0) * CELL_INSET);
        let (left, top, inner_w) = (x0 + ix, y0 + iy, x1 - x0 - 2.0 * ix);
        let strip = (y1 - y0 - 2.0 * iy) / words.len() as f64;
        for (k, word) in words.iter().enumerate() {
            let fill = rng.gen_range(0.4..=1.0);
            let bbox = BBox::new(
                left,
                top + k as f64 * strip + 0.1 * strip,
                left + inner_w * fill,
                top + (k + 1) as f64 * strip - 0.1 * strip,
            )
            .expect("box lies inside its cell");
            boxes.push(AnnotatedBox::targeted(bbox, *word, i));
        }
    }
    boxes.sort_by(|a, b| {
        (a.bbox.y_min(), a.bbox.x_min())
            .partial_cmp(&(b.bbox.y_min(), b.bbox.x_min()))
            .expect("finite coordinates")
    });
    CellAnnotations::new(boxes)
}

fn watermark_text<R: Rng>(rng: &mut R) -> &'static str {
    let all = WATERMARK_SHORT.len() + WATERMARK_MEDIUM.len() + WATERMARK_LONG.len();
    let mut i = rng.gen_range(0..all);
    for list in [WATERMARK_SHORT, WATERMARK_MEDIUM, WATERMARK_LONG] {
        if i < list.len() {
            return list[i];
        }
        i -= list.len();
    }
    unreachable!()
}

/// A jittered, rescaled copy of `host` with IOU at least `min_iou`.
fn distractor_box<R: Rng>(rng: &mut R, host: &BBox, min_iou: f64) -> BBox {
    let (w, h) = (host.width(), host.height());
    let (cx, cy) = ((host.x_min() + host.x_max()) / 2.0, (host.y_min() + host.y_max()) / 2.0);
    for _ in 0..WATERMARK_ATTEMPTS {
        let nw = w * rng.gen_range(0.85..1.2);
        let nh = h * rng.gen_range(0.85..1.2);
        let ncx = cx + w * rng.gen_range(-0.1..0.1);
        let ncy = cy + h * rng.gen_range(-0.1..0.1);
        let candidate = BBox::new(
            (ncx - nw / 2.0).max(0.0),
            (ncy - nh / 2.0).max(0.0),
            (ncx + nw / 2.0).min(1.0),
            (ncy + nh / 2.0).min(1.0),
        );
        if let Ok(b) = candidate {
            if b.iou(host) >= min_iou {
                return b;
            }
        }
    }
    *host
}

/// Gives each real box, with the configured probability, a distractor placed
/// right after it.
pub fn inject_watermarks<R: Rng>(rng: &mut R, annotations: &CellAnnotations, wm: &WatermarkConfig) -> CellAnnotations {
    if !wm.enabled || wm.probability == 0.0 {
        return annotations.clone();
    }
    let mut boxes = Vec::with_capacity(annotations.len());
    for b in &annotations.boxes {
        boxes.push(b.clone());
        if b.is_distractor() || !rng.gen_bool(wm.probability) {
            continue;
        }
        let text = watermark_text(rng);
        boxes.push(AnnotatedBox::distractor(distractor_box(rng, &b.bbox, wm.min_iou), text));
    }
    CellAnnotations::new(boxes)
}

/// One table with its annotations and supervision targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSample {
    pub index: u64,
    pub grid: TableGrid,
    pub otsl: OtslSequence,
    pub html_gt: HtmlTree,
    pub annotations: CellAnnotations,
    pub layout: SequenceLayout,
    /// Token position of each box's data tag; `None` for distractors.
    pub pointer_labels: Vec<Option<usize>>,
    /// Per data tag: true when no box belongs to the cell.
    pub empty_labels: Vec<bool>,
}

impl CorpusSample {
    /// Derives the coded forms and labels. A cell must have boxes exactly
    /// when it has content.
    pub fn new(
        index: u64,
        grid: TableGrid,
        annotations: CellAnnotations,
        box_slots: usize,
    ) -> Result<Self, CorpusError> {
        annotations
            .validate_against(&grid)
            .map_err(|e| CorpusError::Inconsistent(e.to_string()))?;
        let otsl = grid_to_otsl(&grid);
        let d = data_tag_indices(&otsl);
        let mut has_box = vec![false; grid.cells().len()];
        let pointer_labels = annotations
            .boxes
            .iter()
            .map(|b| {
                b.target().map(|t| {
                    has_box[t] = true;
                    d.as_slice()[t]
                })
            })
            .collect();
        for (i, cell) in grid.cells().iter().enumerate() {
            if !cell.is_empty() && !has_box[i] {
                return Err(CorpusError::Inconsistent(format!("cell {i} has text but no boxes")));
            }
        }
        let empty_labels = has_box.iter().map(|&b| !b).collect();
        let layout = build_sequence_layout(annotations.len(), box_slots)?;
        Ok(Self {
            index,
            html_gt: grid_to_html(&grid, true),
            otsl,
            grid,
            annotations,
            layout,
            pointer_labels,
            empty_labels,
        })
    }

    pub fn data_tags(&self) -> crate::codec::DataTagIndexSet {
        data_tag_indices(&self.otsl)
    }

    pub fn texts(&self) -> Vec<&str> {
        self.annotations.boxes.iter().map(|b| b.text.as_str()).collect()
    }
}

pub fn generate_sample(config: &CorpusConfig, index: u64) -> Result<CorpusSample, CorpusError> {
    let mut rng = sample_rng(config.seed, index);
    let grid = generate_grid(&mut rng, config);
    let mut annotations = generate_annotations(&mut rng, &grid);
    annotations = inject_watermarks(&mut rng, &annotations, &config.watermark);
    CorpusSample::new(index, grid, annotations, config.box_slots)
}

pub fn generate_corpus(config: &CorpusConfig) -> Result<Vec<CorpusSample>, CorpusError> {
    config.validate()?;
    (0..config.n_samples as u64)
        .into_par_iter()
        .map(|i| generate_sample(config, i))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct RawSample {
    format_version: u32,
    index: u64,
    grid: TableGrid,
    otsl: String,
    html_gt: String,
    annotations: CellAnnotations,
    layout: SequenceLayout,
    pointer_labels: Vec<Option<usize>>,
    empty_labels: Vec<bool>,
}

impl Serialize for CorpusSample {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RawSample {
            format_version: FORMAT_VERSION,
            index: self.index,
            grid: self.grid.clone(),
            otsl: self.otsl.to_string(),
            html_gt: self.html_gt.to_html(),
            annotations: self.annotations.clone(),
            layout: self.layout,
            pointer_labels: self.pointer_labels.clone(),
            empty_labels: self.empty_labels.clone(),
        }
        .serialize(serializer)
    }
}

impl TryFrom<RawSample> for CorpusSample {
    type Error = String;

    fn try_from(raw: RawSample) -> Result<Self, String> {
        if raw.format_version != FORMAT_VERSION {
            return Err(format!(
                "unsupported format_version {}, expected {FORMAT_VERSION}",
                raw.format_version
            ));
        }
        let sample = CorpusSample::new(raw.index, raw.grid, raw.annotations, raw.layout.box_slots())
            .map_err(|e| e.to_string())?;
        let otsl = otsl_parse(&raw.otsl).map_err(|e| format!("otsl: {e}"))?;
        let html = parse_html(&raw.html_gt).map_err(|e| format!("html_gt: {e}"))?;
        if otsl != sample.otsl || html != sample.html_gt {
            return Err("otsl or html_gt disagrees with grid".into());
        }
        if raw.layout != sample.layout
            || raw.pointer_labels != sample.pointer_labels
            || raw.empty_labels != sample.empty_labels
        {
            return Err("labels or layout disagree with grid and annotations".into());
        }
        Ok(sample)
    }
}

impl<'de> Deserialize<'de> for CorpusSample {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawSample::deserialize(deserializer)?;
        CorpusSample::try_from(raw).map_err(serde::de::Error::custom)
    }
}

pub fn write_corpus_to<W: Write>(mut out: W, samples: &[CorpusSample]) -> Result<(), CorpusError> {
    for s in samples {
        serde_json::to_writer(&mut out, s).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_corpus(path: &Path, samples: &[CorpusSample]) -> Result<(), CorpusError> {
    write_corpus_to(BufWriter::new(File::create(path)?), samples)
}

/// Reads JSON lines; blank lines are skipped, line numbers are 1-based.
pub fn read_corpus_from<R: BufRead>(input: R) -> Result<Vec<CorpusSample>, CorpusError> {
    let mut samples = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = serde_json::from_str(&line).map_err(|e| CorpusError::SchemaViolation {
            line: i + 1,
            message: e.to_string(),
        })?;
        samples.push(sample);
    }
    Ok(samples)
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusSample>, CorpusError> {
    read_corpus_from(BufReader::new(File::open(path)?))
}

/// Decoder hidden states (`B + T` rows) with the box and tag projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFeatures {
    pub hidden: FeatureMatrix,
    pub box_projection: ProjectionMatrix,
    pub tag_projection: ProjectionMatrix,
}

/// Features that make the pointer heads recover the ground truth.
///
/// With `n = |D|`, data tag `m` is `e_m + e_n` when its cell is empty and
/// `e_m - e_n` otherwise; the special slot is `margin · e_n`, a real box of
/// cell `m` is `margin · e_m` and a distractor is `margin · e_{n+1}`. Other
/// rows are zero.
pub fn oracle_features(sample: &CorpusSample, d: usize, margin: f64) -> Result<SampleFeatures, CorpusError> {
    if !(margin.is_finite() && margin > 0.0) {
        return Err(CorpusError::InvalidMargin(margin));
    }
    let tags = sample.data_tags();
    let n = tags.len();
    if d < n + 2 {
        return Err(CorpusError::DimensionTooSmall {
            required: n + 2,
            got: d,
        });
    }
    let b = sample.layout.box_slots();
    let t = sample.otsl.len();
    let mut hidden = FeatureMatrix::zeros(b + t, d);
    hidden.set(sample.layout.special_slot(), n, margin);
    for (j, label) in sample.pointer_labels.iter().enumerate() {
        let slot = sample.layout.real_slots().start + j;
        let channel = match label {
            Some(k) => tags.column_of(*k).expect("labels point at data tags"),
            None => n + 1,
        };
        hidden.set(slot, channel, margin);
    }
    for (m, &k) in tags.as_slice().iter().enumerate() {
        hidden.set(b + k, m, 1.0);
        hidden.set(b + k, n, if sample.empty_labels[m] { 1.0 } else { -1.0 });
    }
    Ok(SampleFeatures {
        hidden,
        box_projection: ProjectionMatrix::identity(d),
        tag_projection: ProjectionMatrix::identity(d),
    })
}

/// Filter weights that keep boxes with a zero distractor channel (`e_{n+1}`
/// in [`oracle_features`]) and drop boxes carrying `margin` on it.
pub fn oracle_filter_params(n_data_tags: usize, d: usize, margin: f64) -> Result<FilterParams, CorpusError> {
    if !(margin.is_finite() && margin > 0.0) {
        return Err(CorpusError::InvalidMargin(margin));
    }
    if d < n_data_tags + 2 {
        return Err(CorpusError::DimensionTooSmall {
            required: n_data_tags + 2,
            got: d,
        });
    }
    let mut params = FilterParams::zeros(d, FilterParams::default_hidden(d));
    params.w1.set(0, n_data_tags + 1, 1.0);
    params.w2[0] = -10.0 / margin;
    params.b2 = 5.0;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::otsl_to_grid;

    fn config() -> CorpusConfig {
        CorpusConfig::default()
    }

    #[test]
    fn no_spans_means_simple_cells() {
        let cfg = CorpusConfig {
            span_probability: 0.0,
            ..config()
        };
        for i in 0..50 {
            let g = generate_grid(&mut sample_rng(1, i), &cfg);
            assert!(g.cells().iter().all(|c| c.rowspan == 1 && c.colspan == 1));
            assert_eq!(g.cells().len(), g.n_rows() * g.n_cols());
        }
    }

    #[test]
    fn boxes_match_words() {
        let cfg = CorpusConfig {
            max_boxes_per_cell: 1,
            empty_cell_probability: 0.0,
            ..config()
        };
        let s = generate_sample(&cfg, 3).unwrap();
        assert_eq!(s.annotations.len(), s.grid.cells().len());
        let mut targets: Vec<usize> = s.annotations.boxes.iter().map(|b| b.target().unwrap()).collect();
        targets.sort_unstable();
        assert_eq!(targets, (0..s.grid.cells().len()).collect::<Vec<_>>());

        let cfg = CorpusConfig {
            empty_cell_probability: 1.0,
            ..config()
        };
        let s = generate_sample(&cfg, 3).unwrap();
        assert!(s.annotations.is_empty());
        assert!(s.empty_labels.iter().all(|&e| e));
    }

    #[test]
    fn many_to_one_boxes_share_a_label() {
        let cfg = CorpusConfig {
            max_boxes_per_cell: 3,
            empty_cell_probability: 0.0,
            ..config()
        };
        let found = (0..50).any(|i| {
            let s = generate_sample(&cfg, i).unwrap();
            s.grid
                .cells()
                .iter()
                .any(|c| c.content.as_deref().unwrap().contains(' '))
                && s.pointer_labels.len() > s.grid.cells().len()
        });
        assert!(found);
    }

    #[test]
    fn watermarks_overlap_their_hosts() {
        let cfg = CorpusConfig {
            watermark: WatermarkConfig {
                enabled: true,
                probability: 1.0,
                min_iou: 0.8,
            },
            ..config()
        };
        let s = generate_sample(&cfg, 0).unwrap();
        let boxes = &s.annotations.boxes;
        assert_eq!(boxes.len() % 2, 0);
        for pair in boxes.chunks(2) {
            assert!(!pair[0].is_distractor() && pair[1].is_distractor());
            assert!(pair[1].bbox.iou(&pair[0].bbox) >= 0.8);
        }

        let off = CorpusConfig {
            watermark: WatermarkConfig {
                enabled: true,
                probability: 0.0,
                min_iou: 0.8,
            },
            ..config()
        };
        assert_eq!(generate_sample(&off, 0).unwrap().annotations.distractor_count(), 0);
    }

    #[test]
    fn labels_are_sound() {
        let cfg = CorpusConfig {
            watermark: WatermarkConfig {
                enabled: true,
                ..Default::default()
            },
            ..config()
        };
        for s in generate_corpus(&CorpusConfig { n_samples: 30, ..cfg }).unwrap() {
            let d = s.data_tags();
            assert_eq!(d.len(), s.grid.cells().len());
            for label in s.pointer_labels.iter().flatten() {
                assert!(d.column_of(*label).is_some());
            }
            for (m, &empty) in s.empty_labels.iter().enumerate() {
                let boxes = s.pointer_labels.iter().filter(|l| **l == Some(d.as_slice()[m])).count();
                assert_eq!(empty, boxes == 0);
            }
            assert!(otsl_to_grid(&s.otsl).unwrap().same_structure(&s.grid));
        }
    }

    #[test]
    fn oracle_rejects_bad_inputs() {
        let s = generate_sample(&config(), 0).unwrap();
        assert!(matches!(
            oracle_features(&s, 64, 0.0),
            Err(CorpusError::InvalidMargin(_))
        ));
        assert!(matches!(
            oracle_features(&s, 1, 1.0),
            Err(CorpusError::DimensionTooSmall { .. })
        ));
    }

    #[test]
    fn schema_errors_carry_line_numbers() {
        let samples = generate_corpus(&CorpusConfig {
            n_samples: 3,
            ..config()
        })
        .unwrap();
        let mut buf = Vec::new();
        write_corpus_to(&mut buf, &samples).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(read_corpus_from(text.as_bytes()).unwrap(), samples);

        let mut lines: Vec<&str> = text.lines().collect();
        let cut = &lines[1][..lines[1].len() / 2];
        lines[1] = cut;
        match read_corpus_from(lines.join("\n").as_bytes()) {
            Err(CorpusError::SchemaViolation { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
        match read_corpus_from(bumped.as_bytes()) {
            Err(CorpusError::SchemaViolation { line, message }) => {
                assert_eq!(line, 1);
                assert!(message.contains("format_version"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(config().validate().is_ok());
        let bad = CorpusConfig {
            span_probability: 1.5,
            ..config()
        };
        assert!(bad.validate().is_err());
        let bad = CorpusConfig {
            max_span: 1,
            ..config()
        };
        assert!(bad.validate().is_err());
        let bad = CorpusConfig {
            feature_dim: 8,
            ..config()
        };
        assert!(matches!(bad.validate(), Err(CorpusError::DimensionTooSmall { .. })));
    }
}
