//! OTSL token sequences and their bijection with [`TableGrid`].
//!
//! The alphabet is `C` (cell anchor), `L` (merge with left), `U` (merge with
//! above), `X` (merge with both) and `NL` (end of row). A sequence is
//! validated on construction, so every [`OtslSequence`] value is well formed.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::model::{CellSpec, TableGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OtslToken {
    C,
    L,
    U,
    X,
    NL,
}

impl OtslToken {
    pub fn as_str(self) -> &'static str {
        match self {
            OtslToken::C => "C",
            OtslToken::L => "L",
            OtslToken::U => "U",
            OtslToken::X => "X",
            OtslToken::NL => "NL",
        }
    }
}

impl fmt::Display for OtslToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OtslToken {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "C" => Ok(OtslToken::C),
            "L" => Ok(OtslToken::L),
            "U" => Ok(OtslToken::U),
            "X" => Ok(OtslToken::X),
            "NL" => Ok(OtslToken::NL),
            _ => Err(()),
        }
    }
}

/// Located diagnostics. `row`/`col` are 0-based grid coordinates.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OtslError {
    #[error("empty OTSL sequence")]
    EmptySequence,
    #[error("unknown token {token:?} at position {position}")]
    UnknownToken { token: String, position: usize },
    #[error("row {row} has no cells")]
    EmptyRow { row: usize },
    #[error("row {row} is not terminated by NL")]
    UnterminatedRow { row: usize },
    #[error("row {row} has {found} tokens, expected {expected}")]
    RaggedRows { row: usize, expected: usize, found: usize },
    #[error("illegal L at ({row},{col}): L needs a C or L to its left")]
    IllegalL { row: usize, col: usize },
    #[error("illegal U at ({row},{col}): U needs a C, U or X above it")]
    IllegalU { row: usize, col: usize },
    #[error("illegal X at ({row},{col}): X needs U or X to its left and L or X above it")]
    IllegalX { row: usize, col: usize },
    #[error("merge region anchored at ({row},{col}) is not a rectangle")]
    NonRectangularMerge { row: usize, col: usize },
}

/// A validated OTSL sequence: rectangular rows, each terminated by `NL`, with
/// every merge token placed next to a legal neighbour.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OtslSequence {
    tokens: Vec<OtslToken>,
    n_rows: usize,
    n_cols: usize,
}

impl OtslSequence {
    pub fn from_tokens(tokens: Vec<OtslToken>) -> Result<Self, OtslError> {
        if tokens.is_empty() {
            return Err(OtslError::EmptySequence);
        }
        let mut rows: Vec<&[OtslToken]> = Vec::new();
        let mut start = 0;
        for (i, t) in tokens.iter().enumerate() {
            if *t == OtslToken::NL {
                rows.push(&tokens[start..i]);
                start = i + 1;
            }
        }
        if start != tokens.len() {
            return Err(OtslError::UnterminatedRow { row: rows.len() });
        }
        let n_cols = rows[0].len();
        for (r, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(OtslError::EmptyRow { row: r });
            }
            if row.len() != n_cols {
                return Err(OtslError::RaggedRows {
                    row: r,
                    expected: n_cols,
                    found: row.len(),
                });
            }
        }
        for (r, row) in rows.iter().enumerate() {
            for (c, &tok) in row.iter().enumerate() {
                let left = (c > 0).then(|| row[c - 1]);
                let above = (r > 0).then(|| rows[r - 1][c]);
                use OtslToken::*;
                match tok {
                    L if !matches!(left, Some(C | L)) => return Err(OtslError::IllegalL { row: r, col: c }),
                    U if !matches!(above, Some(C | U | X)) => return Err(OtslError::IllegalU { row: r, col: c }),
                    X if !matches!(left, Some(U | X)) || !matches!(above, Some(L | X)) => {
                        return Err(OtslError::IllegalX { row: r, col: c })
                    }
                    _ => {}
                }
            }
        }
        Ok(Self {
            n_rows: rows.len(),
            n_cols,
            tokens,
        })
    }

    pub fn tokens(&self) -> &[OtslToken] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Token at grid position `(row, col)`; the NL column is not addressable.
    pub fn at(&self, row: usize, col: usize) -> OtslToken {
        self.tokens[row * (self.n_cols + 1) + col]
    }
}

impl fmt::Display for OtslSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(t.as_str())?;
        }
        Ok(())
    }
}

impl FromStr for OtslSequence {
    type Err = OtslError;
    fn from_str(s: &str) -> Result<Self, OtslError> {
        otsl_parse(s)
    }
}

/// Parses whitespace-separated OTSL tokens and validates the result.
pub fn otsl_parse(text: &str) -> Result<OtslSequence, OtslError> {
    let tokens = text
        .split_whitespace()
        .enumerate()
        .map(|(position, s)| {
            s.parse::<OtslToken>().map_err(|_| OtslError::UnknownToken {
                token: s.to_string(),
                position,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    OtslSequence::from_tokens(tokens)
}

/// Decodes the merge regions of a sequence into a grid of empty cells.
pub fn otsl_to_grid(seq: &OtslSequence) -> Result<TableGrid, OtslError> {
    let (n_rows, n_cols) = (seq.n_rows, seq.n_cols);
    let mut claimed = vec![false; n_rows * n_cols];
    let mut cells = Vec::new();
    for r in 0..n_rows {
        for c in 0..n_cols {
            if seq.at(r, c) != OtslToken::C {
                continue;
            }
            let width = 1 + (c + 1..n_cols).take_while(|&cc| seq.at(r, cc) == OtslToken::L).count();
            let height = 1 + (r + 1..n_rows).take_while(|&rr| seq.at(rr, c) == OtslToken::U).count();
            for rr in r..r + height {
                for cc in c..c + width {
                    let expected = match (rr == r, cc == c) {
                        (true, true) => OtslToken::C,
                        (true, false) => OtslToken::L,
                        (false, true) => OtslToken::U,
                        (false, false) => OtslToken::X,
                    };
                    let slot = &mut claimed[rr * n_cols + cc];
                    if seq.at(rr, cc) != expected || *slot {
                        return Err(OtslError::NonRectangularMerge { row: r, col: c });
                    }
                    *slot = true;
                }
            }
            cells.push(CellSpec::new(r, c, height, width));
        }
    }
    if let Some(pos) = claimed.iter().position(|&taken| !taken) {
        // An orphan merge token belongs to a region that stopped short of it.
        let (row, col) = (pos / n_cols, pos % n_cols);
        return Err(orphan_owner(seq, row, col));
    }
    TableGrid::new(n_rows, n_cols, cells).map_err(|_| OtslError::NonRectangularMerge { row: 0, col: 0 })
}

/// Walks up and left from an orphan merge token to the nearest anchor so the
/// diagnostic names the region that failed to close.
fn orphan_owner(seq: &OtslSequence, mut row: usize, mut col: usize) -> OtslError {
    loop {
        match seq.at(row, col) {
            OtslToken::L | OtslToken::X if col > 0 => col -= 1,
            OtslToken::U if row > 0 => row -= 1,
            _ => return OtslError::NonRectangularMerge { row, col },
        }
    }
}

/// Encodes a grid; inverse of [`otsl_to_grid`] up to cell text.
pub fn grid_to_otsl(grid: &TableGrid) -> OtslSequence {
    let (n_rows, n_cols) = (grid.n_rows(), grid.n_cols());
    let mut tokens = Vec::with_capacity(n_rows * (n_cols + 1));
    for r in 0..n_rows {
        for c in 0..n_cols {
            let cell = grid.cell(grid.cell_at(r, c));
            tokens.push(match (r == cell.anchor_row, c == cell.anchor_col) {
                (true, true) => OtslToken::C,
                (true, false) => OtslToken::L,
                (false, true) => OtslToken::U,
                (false, false) => OtslToken::X,
            });
        }
        tokens.push(OtslToken::NL);
    }
    OtslSequence { tokens, n_rows, n_cols }
}

/// Positions of the data tags (`C` tokens) in the sequence, ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataTagIndexSet {
    indices: Vec<usize>,
}

impl DataTagIndexSet {
    /// Builds a set from explicit positions; they are sorted and deduplicated.
    pub fn from_positions(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Column of token position `k` within the set, if it is a data tag.
    pub fn column_of(&self, k: usize) -> Option<usize> {
        self.indices.binary_search(&k).ok()
    }
}

pub fn data_tag_indices(seq: &OtslSequence) -> DataTagIndexSet {
    DataTagIndexSet {
        indices: seq
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == OtslToken::C)
            .map(|(i, _)| i)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(text: &str) -> TableGrid {
        otsl_to_grid(&otsl_parse(text).unwrap()).unwrap()
    }

    #[test]
    fn parses_valid_sequences() {
        for text in [
            "C C NL C C NL",
            "C L NL C C NL",
            "C C NL U C NL",
            "C L NL U X NL",
            "C NL",
        ] {
            let seq = otsl_parse(text).unwrap();
            assert_eq!(seq.to_string(), text);
        }
        let seq = otsl_parse("C C NL C C NL").unwrap();
        assert_eq!((seq.n_rows(), seq.n_cols()), (2, 2));
    }

    #[test]
    fn reports_first_violated_rule() {
        assert_eq!(otsl_parse("L C NL"), Err(OtslError::IllegalL { row: 0, col: 0 }));
        assert_eq!(otsl_parse(""), Err(OtslError::EmptySequence));
        assert_eq!(otsl_parse("   "), Err(OtslError::EmptySequence));
        assert_eq!(
            otsl_parse("C Q NL"),
            Err(OtslError::UnknownToken {
                token: "Q".into(),
                position: 1
            })
        );
        assert_eq!(
            otsl_parse("c NL").unwrap_err(),
            OtslError::UnknownToken {
                token: "c".into(),
                position: 0
            }
        );
        assert_eq!(
            otsl_parse("C C NL C NL"),
            Err(OtslError::RaggedRows {
                row: 1,
                expected: 2,
                found: 1
            })
        );
        assert_eq!(otsl_parse("C C"), Err(OtslError::UnterminatedRow { row: 0 }));
        assert_eq!(otsl_parse("C NL NL"), Err(OtslError::EmptyRow { row: 1 }));
        assert_eq!(otsl_parse("U NL"), Err(OtslError::IllegalU { row: 0, col: 0 }));
        assert_eq!(
            otsl_parse("C C NL C L NL L C NL").unwrap_err(),
            OtslError::IllegalL { row: 2, col: 0 }
        );
        assert_eq!(otsl_parse("C C NL U L NL"), Err(OtslError::IllegalL { row: 1, col: 1 }));
        assert_eq!(otsl_parse("C C NL C X NL"), Err(OtslError::IllegalX { row: 1, col: 1 }));
        assert_eq!(otsl_parse("C C NL U X NL"), Err(OtslError::IllegalX { row: 1, col: 1 }));
        assert_eq!(otsl_parse("X NL"), Err(OtslError::IllegalX { row: 0, col: 0 }));
    }

    #[test]
    fn decodes_spans() {
        let g = grid("C C NL C C NL");
        assert_eq!(g.cells().len(), 4);
        assert!(g.cells().iter().all(|c| c.rowspan == 1 && c.colspan == 1));

        let g = grid("C L NL C C NL");
        assert_eq!(g.cells().len(), 3);
        assert_eq!(g.cell(0).colspan, 2);

        let g = grid("C C NL U C NL");
        assert_eq!(g.cells().len(), 3);
        assert_eq!(g.cell(0).rowspan, 2);

        let g = grid("C L NL U X NL");
        assert_eq!(g.cells(), &[CellSpec::new(0, 0, 2, 2)]);
    }

    #[test]
    fn rejects_non_rectangular_regions() {
        // Legal neighbours everywhere, but the regions do not close.
        let seq = otsl_parse("C L L NL U X C NL").unwrap();
        assert_eq!(
            otsl_to_grid(&seq),
            Err(OtslError::NonRectangularMerge { row: 0, col: 0 })
        );
        let seq = otsl_parse("C L NL U C NL").unwrap();
        assert_eq!(
            otsl_to_grid(&seq),
            Err(OtslError::NonRectangularMerge { row: 0, col: 0 })
        );
        let seq = otsl_parse("C L NL U X NL U C NL").unwrap();
        assert_eq!(
            otsl_to_grid(&seq),
            Err(OtslError::NonRectangularMerge { row: 0, col: 0 })
        );
        // U under an X whose region already closed: an unclaimed token.
        let seq = otsl_parse("C L NL U X NL C U NL").unwrap();
        assert_eq!(
            otsl_to_grid(&seq),
            Err(OtslError::NonRectangularMerge { row: 0, col: 0 })
        );
    }

    #[test]
    fn encodes_grids() {
        let single = TableGrid::new(1, 1, vec![CellSpec::simple(0, 0)]).unwrap();
        assert_eq!(grid_to_otsl(&single).to_string(), "C NL");
        let block = TableGrid::new(2, 2, vec![CellSpec::new(0, 0, 2, 2)]).unwrap();
        assert_eq!(grid_to_otsl(&block).to_string(), "C L NL U X NL");
        for text in ["C C NL C C NL", "C L NL C C NL", "C C NL U C NL"] {
            assert_eq!(grid_to_otsl(&grid(text)).to_string(), text);
        }
    }

    #[test]
    fn data_tags_are_c_positions() {
        let d = |t: &str| data_tag_indices(&otsl_parse(t).unwrap()).as_slice().to_vec();
        assert_eq!(d("C C NL C C NL"), vec![0, 1, 3, 4]);
        assert_eq!(d("C L NL C C NL"), vec![0, 3, 4]);
        assert_eq!(d("C NL"), vec![0]);
        let set = data_tag_indices(&otsl_parse("C L NL C C NL").unwrap());
        assert_eq!(set.column_of(3), Some(1));
        assert_eq!(set.column_of(1), None);
    }
}
