//! Canonical table types shared by the codecs, metrics and supervision code.
//!
//! A [`TableGrid`] is a rectangular tiling of cells with row/column spans. It is
//! the pivot between OTSL, HTML and the pointer/contrastive targets. Box
//! geometry lives in [`BBox`] and [`CellAnnotations`], with coordinates
//! normalized to the unit square.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid grid: {0}")]
    InvalidGrid(ValidationReport),
    #[error("invalid bounding box [{0}, {1}, {2}, {3}]")]
    InvalidBox(f64, f64, f64, f64),
    #[error("invalid annotations: {0}")]
    InvalidAnnotations(String),
}

/// One cell of a [`TableGrid`]. `content` is `None` exactly for empty cells.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellSpec {
    pub anchor_row: usize,
    pub anchor_col: usize,
    pub rowspan: usize,
    pub colspan: usize,
    pub content: Option<String>,
}

impl CellSpec {
    pub fn new(anchor_row: usize, anchor_col: usize, rowspan: usize, colspan: usize) -> Self {
        Self {
            anchor_row,
            anchor_col,
            rowspan,
            colspan,
            content: None,
        }
    }

    /// A 1×1 empty cell.
    pub fn simple(anchor_row: usize, anchor_col: usize) -> Self {
        Self::new(anchor_row, anchor_col, 1, 1)
    }

    pub fn with_content(mut self, text: impl Into<String>) -> Self {
        self.content = Some(text.into());
        self
    }

    pub fn is_empty(&self) -> bool {
        self.content.is_none()
    }

    pub fn row_range(&self) -> std::ops::Range<usize> {
        self.anchor_row..self.anchor_row + self.rowspan
    }

    pub fn col_range(&self) -> std::ops::Range<usize> {
        self.anchor_col..self.anchor_col + self.colspan
    }
}

/// A single invariant violation found by [`validate_grid`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyDimensions { n_rows: usize, n_cols: usize },
    ZeroSpan { cell: usize },
    OutOfBounds { cell: usize },
    Overlap { row: usize, col: usize },
    Gap { row: usize, col: usize },
    OutOfOrder { cell: usize },
    BlankContent { cell: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyDimensions { n_rows, n_cols } => {
                write!(f, "grid dimensions {n_rows}x{n_cols} must be positive")
            }
            Violation::ZeroSpan { cell } => write!(f, "cell {cell} has a zero span"),
            Violation::OutOfBounds { cell } => write!(f, "cell {cell} extends past the grid"),
            Violation::Overlap { row, col } => write!(f, "overlap at ({row},{col})"),
            Violation::Gap { row, col } => write!(f, "gap at ({row},{col})"),
            Violation::OutOfOrder { cell } => {
                write!(f, "cell {cell} is not in row-major anchor order")
            }
            Violation::BlankContent { cell } => {
                write!(f, "cell {cell} is non-empty but has blank text")
            }
        }
    }
}

/// Outcome of [`validate_grid`]; an empty violation list means the grid is valid.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Checks every tiling invariant of a candidate grid and reports all violations.
///
/// Violations are data: the function never fails. Overlaps and gaps are
/// reported per grid position.
pub fn validate_grid(n_rows: usize, n_cols: usize, cells: &[CellSpec]) -> ValidationReport {
    let mut violations = Vec::new();
    if n_rows == 0 || n_cols == 0 {
        violations.push(Violation::EmptyDimensions { n_rows, n_cols });
        return ValidationReport { violations };
    }
    let mut cover = vec![0u32; n_rows * n_cols];
    for (i, cell) in cells.iter().enumerate() {
        if cell.rowspan == 0 || cell.colspan == 0 {
            violations.push(Violation::ZeroSpan { cell: i });
            continue;
        }
        if cell.anchor_row + cell.rowspan > n_rows || cell.anchor_col + cell.colspan > n_cols {
            violations.push(Violation::OutOfBounds { cell: i });
        }
        if matches!(&cell.content, Some(t) if t.is_empty()) {
            violations.push(Violation::BlankContent { cell: i });
        }
        for r in cell.row_range().filter(|&r| r < n_rows) {
            for c in cell.col_range().filter(|&c| c < n_cols) {
                cover[r * n_cols + c] += 1;
            }
        }
    }
    for r in 0..n_rows {
        for c in 0..n_cols {
            match cover[r * n_cols + c] {
                0 => violations.push(Violation::Gap { row: r, col: c }),
                1 => {}
                _ => violations.push(Violation::Overlap { row: r, col: c }),
            }
        }
    }
    for (i, pair) in cells.windows(2).enumerate() {
        let a = (pair[0].anchor_row, pair[0].anchor_col);
        let b = (pair[1].anchor_row, pair[1].anchor_col);
        if a >= b {
            violations.push(Violation::OutOfOrder { cell: i + 1 });
        }
    }
    ValidationReport { violations }
}

/// A validated rectangular tiling of cells.
///
/// Immutable once built: cells are stored in row-major anchor order and the
/// occupancy map gives the owning cell of every grid position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableGrid {
    n_rows: usize,
    n_cols: usize,
    cells: Vec<CellSpec>,
    occupancy: Vec<usize>,
}

impl TableGrid {
    /// Builds a grid, sorting the cells into reading order first.
    pub fn new(n_rows: usize, n_cols: usize, mut cells: Vec<CellSpec>) -> Result<Self, ModelError> {
        cells.sort_by_key(|c| (c.anchor_row, c.anchor_col));
        let report = validate_grid(n_rows, n_cols, &cells);
        if !report.is_ok() {
            return Err(ModelError::InvalidGrid(report));
        }
        let mut occupancy = vec![0; n_rows * n_cols];
        for (i, cell) in cells.iter().enumerate() {
            for r in cell.row_range() {
                for c in cell.col_range() {
                    occupancy[r * n_cols + c] = i;
                }
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            cells,
            occupancy,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn cells(&self) -> &[CellSpec] {
        &self.cells
    }

    pub fn cell(&self, index: usize) -> &CellSpec {
        &self.cells[index]
    }

    /// Index of the cell covering `(row, col)`.
    pub fn cell_at(&self, row: usize, col: usize) -> usize {
        self.occupancy[row * self.n_cols + col]
    }

    /// The same tiling with every cell marked empty.
    pub fn without_content(&self) -> Self {
        let mut out = self.clone();
        for cell in &mut out.cells {
            cell.content = None;
        }
        out
    }

    /// True when both grids have the same dimensions and spans, ignoring text.
    pub fn same_structure(&self, other: &TableGrid) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && self.cells.len() == other.cells.len()
            && self.cells.iter().zip(&other.cells).all(|(a, b)| {
                (a.anchor_row, a.anchor_col, a.rowspan, a.colspan) == (b.anchor_row, b.anchor_col, b.rowspan, b.colspan)
            })
    }
}

/// Cell indices sorted by `(anchor_row, anchor_col)`.
///
/// On a constructed grid this is the identity permutation, since construction
/// already stores cells in this order.
pub fn reading_order(grid: &TableGrid) -> Vec<usize> {
    let mut order: Vec<usize> = (0..grid.cells.len()).collect();
    order.sort_by_key(|&i| (grid.cells[i].anchor_row, grid.cells[i].anchor_col));
    order
}

#[derive(Serialize, Deserialize)]
struct RawCell {
    r: usize,
    c: usize,
    rowspan: usize,
    colspan: usize,
    empty: bool,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    n_rows: usize,
    n_cols: usize,
    cells: Vec<RawCell>,
}

impl Serialize for TableGrid {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let raw = RawGrid {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            cells: self
                .cells
                .iter()
                .map(|c| RawCell {
                    r: c.anchor_row,
                    c: c.anchor_col,
                    rowspan: c.rowspan,
                    colspan: c.colspan,
                    empty: c.is_empty(),
                    text: c.content.clone(),
                })
                .collect(),
        };
        raw.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TableGrid {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = RawGrid::deserialize(deserializer)?;
        let mut cells = Vec::with_capacity(raw.cells.len());
        for (i, c) in raw.cells.into_iter().enumerate() {
            if c.empty != c.text.is_none() {
                return Err(D::Error::custom(format!(
                    "cell {i}: \"empty\" must be true exactly when \"text\" is absent"
                )));
            }
            cells.push(CellSpec {
                anchor_row: c.r,
                anchor_col: c.c,
                rowspan: c.rowspan,
                colspan: c.colspan,
                content: c.text,
            });
        }
        TableGrid::new(raw.n_rows, raw.n_cols, cells).map_err(D::Error::custom)
    }
}

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    /// Rejects non-finite, out-of-range and zero-area boxes.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, ModelError> {
        let in_unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        if in_unit(x_min) && in_unit(y_min) && in_unit(x_max) && in_unit(y_max) && x_min < x_max && y_min < y_max {
            Ok(Self {
                x_min,
                y_min,
                x_max,
                y_max,
            })
        } else {
            Err(ModelError::InvalidBox(x_min, y_min, x_max, y_max))
        }
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Intersection over union.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        inter / (self.area() + other.area() - inter)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl Serialize for BBox {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [a, b, c, d] = <[f64; 4]>::deserialize(deserializer)?;
        BBox::new(a, b, c, d).map_err(serde::de::Error::custom)
    }
}

/// A text region: its box, its text, and either a target cell or the
/// distractor flag (never both).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct AnnotatedBox {
    pub bbox: BBox,
    pub text: String,
    target: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    bbox: BBox,
    text: String,
    #[serde(default)]
    target: Option<usize>,
    distractor: bool,
}

impl TryFrom<RawBox> for AnnotatedBox {
    type Error = String;
    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        if raw.distractor == raw.target.is_some() {
            return Err("a box is a distractor exactly when it has no target".into());
        }
        Ok(Self {
            bbox: raw.bbox,
            text: raw.text,
            target: raw.target,
        })
    }
}

impl From<AnnotatedBox> for RawBox {
    fn from(b: AnnotatedBox) -> Self {
        RawBox {
            distractor: b.is_distractor(),
            bbox: b.bbox,
            text: b.text,
            target: b.target,
        }
    }
}

impl AnnotatedBox {
    pub fn targeted(bbox: BBox, text: impl Into<String>, cell: usize) -> Self {
        Self {
            bbox,
            text: text.into(),
            target: Some(cell),
        }
    }

    pub fn distractor(bbox: BBox, text: impl Into<String>) -> Self {
        Self {
            bbox,
            text: text.into(),
            target: None,
        }
    }

    pub fn target(&self) -> Option<usize> {
        self.target
    }

    pub fn is_distractor(&self) -> bool {
        self.target.is_none()
    }
}

/// Ordered text regions of one table image.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CellAnnotations {
    pub boxes: Vec<AnnotatedBox>,
}

impl CellAnnotations {
    pub fn new(boxes: Vec<AnnotatedBox>) -> Self {
        Self { boxes }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn distractor_count(&self) -> usize {
        self.boxes.iter().filter(|b| b.is_distractor()).count()
    }

    /// Checks that every target names a non-empty cell of `grid`.
    pub fn validate_against(&self, grid: &TableGrid) -> Result<(), ModelError> {
        for (i, b) in self.boxes.iter().enumerate() {
            if let Some(t) = b.target {
                if t >= grid.cells().len() {
                    return Err(ModelError::InvalidAnnotations(format!(
                        "box {i} targets missing cell {t}"
                    )));
                }
                if grid.cell(t).is_empty() {
                    return Err(ModelError::InvalidAnnotations(format!(
                        "box {i} targets empty cell {t}"
                    )));
                }
            }
        }
        Ok(())
    }
}
