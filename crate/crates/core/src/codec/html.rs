//! Table HTML: a small ordered tree (`table` > `tr` > `td`), its emitter, a
//! tolerant parser, and the conversions to and from [`TableGrid`].
//!
//! Emission is minimal and stable: no whitespace between tags, double-quoted
//! attributes, `colspan` before `rowspan`, and childless elements without
//! text written self-closing (`<td/>`, `<tr/>`, `<table/>`).

use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::model::{CellSpec, ModelError, TableGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Table,
    Tr,
    Td,
}

impl NodeKind {
    pub fn tag(self) -> &'static str {
        match self {
            NodeKind::Table => "table",
            NodeKind::Tr => "tr",
            NodeKind::Td => "td",
        }
    }
}

/// One element. Spans and text are only meaningful on `td` nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HtmlNode {
    pub kind: NodeKind,
    pub colspan: usize,
    pub rowspan: usize,
    pub text: Option<String>,
    pub children: Vec<HtmlNode>,
}

impl HtmlNode {
    pub fn td(colspan: usize, rowspan: usize, text: Option<String>) -> Self {
        Self {
            kind: NodeKind::Td,
            colspan,
            rowspan,
            text,
            children: Vec::new(),
        }
    }

    pub fn tr(cells: Vec<HtmlNode>) -> Self {
        Self {
            kind: NodeKind::Tr,
            colspan: 1,
            rowspan: 1,
            text: None,
            children: cells,
        }
    }

    /// Number of element nodes in this subtree.
    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(HtmlNode::node_count).sum::<usize>()
    }

    /// Text with absent and empty treated alike.
    pub fn text_or_empty(&self) -> &str {
        self.text.as_deref().unwrap_or("")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HtmlError {
    #[error("malformed table markup at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("spans overlap or run past the last row at row {row}, column {col}")]
    OverlappingSpans { row: usize, col: usize },
    #[error("ragged table: {0}")]
    RaggedTable(String),
}

/// A `table` element whose rows are `tr` elements holding `td` cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HtmlTree {
    root: HtmlNode,
}

impl HtmlTree {
    pub fn new(root: HtmlNode) -> Result<Self, HtmlError> {
        if root.kind != NodeKind::Table {
            return Err(HtmlError::InvalidTree("root must be a table".into()));
        }
        for tr in &root.children {
            if tr.kind != NodeKind::Tr {
                return Err(HtmlError::InvalidTree("table children must be tr".into()));
            }
            for td in &tr.children {
                if td.kind != NodeKind::Td || !td.children.is_empty() {
                    return Err(HtmlError::InvalidTree("tr children must be leaf td".into()));
                }
                if td.colspan == 0 || td.rowspan == 0 {
                    return Err(HtmlError::InvalidTree("span attributes must be >= 1".into()));
                }
            }
        }
        Ok(Self { root })
    }

    /// Builds a tree from rows of `td` nodes.
    pub fn from_rows(rows: Vec<Vec<HtmlNode>>) -> Result<Self, HtmlError> {
        Self::new(HtmlNode {
            kind: NodeKind::Table,
            colspan: 1,
            rowspan: 1,
            text: None,
            children: rows.into_iter().map(HtmlNode::tr).collect(),
        })
    }

    pub fn root(&self) -> &HtmlNode {
        &self.root
    }

    pub fn rows(&self) -> &[HtmlNode] {
        &self.root.children
    }

    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    /// The same tree with every cell's text removed.
    pub fn without_text(&self) -> Self {
        let mut out = self.clone();
        for tr in &mut out.root.children {
            for td in &mut tr.children {
                td.text = None;
            }
        }
        out
    }

    pub fn to_html(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for HtmlTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(f, &self.root)
    }
}

fn write_node(f: &mut fmt::Formatter<'_>, node: &HtmlNode) -> fmt::Result {
    let tag = node.kind.tag();
    f.write_char('<')?;
    f.write_str(tag)?;
    if node.kind == NodeKind::Td {
        if node.colspan > 1 {
            write!(f, " colspan=\"{}\"", node.colspan)?;
        }
        if node.rowspan > 1 {
            write!(f, " rowspan=\"{}\"", node.rowspan)?;
        }
    }
    if node.children.is_empty() && node.text.is_none() {
        return f.write_str("/>");
    }
    f.write_char('>')?;
    if let Some(text) = &node.text {
        write_escaped(f, text)?;
    }
    for child in &node.children {
        write_node(f, child)?;
    }
    write!(f, "</{tag}>")
}

fn write_escaped(f: &mut fmt::Formatter<'_>, text: &str) -> fmt::Result {
    for ch in text.chars() {
        match ch {
            '&' => f.write_str("&amp;")?,
            '<' => f.write_str("&lt;")?,
            '>' => f.write_str("&gt;")?,
            '"' => f.write_str("&quot;")?,
            _ => f.write_char(ch)?,
        }
    }
    Ok(())
}

/// Builds the table tree for a grid: one `tr` per grid row, one `td` per cell
/// in its anchor row, span attributes above 1, text only when requested.
pub fn grid_to_html(grid: &TableGrid, include_content: bool) -> HtmlTree {
    let mut rows: Vec<Vec<HtmlNode>> = vec![Vec::new(); grid.n_rows()];
    for cell in grid.cells() {
        let text = if include_content { cell.content.clone() } else { None };
        rows[cell.anchor_row].push(HtmlNode::td(cell.colspan, cell.rowspan, text));
    }
    HtmlTree::from_rows(rows).expect("grid cells always form a valid tree")
}

/// Places cells with the usual row-span carry-over; inverse of [`grid_to_html`].
///
/// A `td` with no text or empty text becomes an empty cell.
pub fn html_to_grid(tree: &HtmlTree) -> Result<TableGrid, HtmlError> {
    let n_rows = tree.rows().len();
    if n_rows == 0 {
        return Err(HtmlError::RaggedTable("table has no rows".into()));
    }
    // occupied[r] holds covered columns of row r, grown on demand.
    let mut occupied: Vec<Vec<bool>> = vec![Vec::new(); n_rows];
    let mut cells = Vec::new();
    for (r, tr) in tree.rows().iter().enumerate() {
        let mut col = 0;
        for td in &tr.children {
            while occupied[r].get(col).copied().unwrap_or(false) {
                col += 1;
            }
            if r + td.rowspan > n_rows {
                return Err(HtmlError::OverlappingSpans { row: r, col });
            }
            for (rr, row) in occupied.iter_mut().enumerate().skip(r).take(td.rowspan) {
                if row.len() < col + td.colspan {
                    row.resize(col + td.colspan, false);
                }
                for slot in &mut row[col..col + td.colspan] {
                    if *slot {
                        return Err(HtmlError::OverlappingSpans { row: rr, col });
                    }
                    *slot = true;
                }
            }
            let mut cell = CellSpec::new(r, col, td.rowspan, td.colspan);
            cell.content = td.text.clone().filter(|t| !t.is_empty());
            cells.push(cell);
            col += td.colspan;
        }
    }
    let n_cols = occupied.iter().map(Vec::len).max().unwrap_or(0);
    for (r, row) in occupied.iter().enumerate() {
        if row.len() != n_cols || row.iter().any(|&o| !o) {
            return Err(HtmlError::RaggedTable(format!(
                "row {r} covers {} of {n_cols} columns",
                row.iter().filter(|&&o| o).count()
            )));
        }
    }
    TableGrid::new(n_rows, n_cols, cells).map_err(|e: ModelError| HtmlError::RaggedTable(e.to_string()))
}

/// Parses table markup.
///
/// Accepts the emitted dialect plus common variants: `<td></td>` pairs,
/// `th` as `td`, `thead`/`tbody` wrappers (flattened), unquoted or
/// single-quoted attributes, inline tags inside cells (dropped, their text
/// kept) and the basic character entities. Whitespace between structural
/// tags is ignored; text inside a cell is kept verbatim.
pub fn parse_html(input: &str) -> Result<HtmlTree, HtmlError> {
    Parser { src: input, pos: 0 }.parse_document()
}

impl std::str::FromStr for HtmlTree {
    type Err = HtmlError;
    fn from_str(s: &str) -> Result<Self, HtmlError> {
        parse_html(s)
    }
}

#[derive(Debug)]
struct Tag {
    name: String,
    closing: bool,
    self_closing: bool,
    colspan: usize,
    rowspan: usize,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, HtmlError> {
        Err(HtmlError::Parse {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    /// Reads the tag starting at `self.pos` (which must be `<`).
    fn read_tag(&mut self) -> Result<Tag, HtmlError> {
        let start = self.pos;
        let Some(end) = self.src[start..].find('>') else {
            return self.err("unterminated tag");
        };
        let body = &self.src[start + 1..start + end];
        self.pos = start + end + 1;
        let (closing, body) = match body.strip_prefix('/') {
            Some(b) => (true, b),
            None => (false, body),
        };
        let (self_closing, body) = match body.trim_end().strip_suffix('/') {
            Some(b) => (true, b),
            None => (false, body),
        };
        let body = body.trim();
        let name_end = body.find(|c: char| c.is_whitespace()).unwrap_or(body.len());
        let name = body[..name_end].to_ascii_lowercase();
        if name.is_empty() {
            self.pos = start;
            return self.err("empty tag name");
        }
        let mut tag = Tag {
            name,
            closing,
            self_closing,
            colspan: 1,
            rowspan: 1,
        };
        let mut attrs = body[name_end..].trim();
        while !attrs.is_empty() {
            let key_end = attrs
                .find(|c: char| c == '=' || c.is_whitespace())
                .unwrap_or(attrs.len());
            let key = attrs[..key_end].to_ascii_lowercase();
            attrs = attrs[key_end..].trim_start();
            let mut value = "";
            if let Some(rest) = attrs.strip_prefix('=') {
                let rest = rest.trim_start();
                let (v, remainder) = match rest.chars().next() {
                    Some(q @ ('"' | '\'')) => match rest[1..].find(q) {
                        Some(close) => (&rest[1..1 + close], &rest[close + 2..]),
                        None => {
                            self.pos = start;
                            return self.err("unterminated attribute value");
                        }
                    },
                    _ => {
                        let e = rest.find(char::is_whitespace).unwrap_or(rest.len());
                        (&rest[..e], &rest[e..])
                    }
                };
                value = v;
                attrs = remainder.trim_start();
            }
            if key == "colspan" || key == "rowspan" {
                let n: usize = match value.trim().parse() {
                    Ok(n) if n >= 1 => n,
                    _ => {
                        self.pos = start;
                        return self.err(format!("{key} must be a positive integer, got {value:?}"));
                    }
                };
                if key == "colspan" {
                    tag.colspan = n;
                } else {
                    tag.rowspan = n;
                }
            }
        }
        Ok(tag)
    }

    fn parse_document(mut self) -> Result<HtmlTree, HtmlError> {
        self.skip_ws();
        if !self.src[self.pos..].starts_with('<') {
            return self.err("expected <table>");
        }
        let tag = self.read_tag()?;
        if tag.name != "table" || tag.closing {
            return self.err("expected <table>");
        }
        let mut rows = Vec::new();
        if !tag.self_closing {
            self.parse_table_body(&mut rows)?;
        }
        self.skip_ws();
        if !self.at_end() {
            return self.err("trailing content after </table>");
        }
        HtmlTree::from_rows(rows)
    }

    fn parse_table_body(&mut self, rows: &mut Vec<Vec<HtmlNode>>) -> Result<(), HtmlError> {
        loop {
            self.skip_ws();
            if self.at_end() {
                return self.err("missing </table>");
            }
            if !self.src[self.pos..].starts_with('<') {
                return self.err("text outside of a cell");
            }
            let tag = self.read_tag()?;
            match (tag.name.as_str(), tag.closing) {
                ("table", true) => return Ok(()),
                ("thead" | "tbody" | "tfoot", _) => {}
                ("tr", false) => {
                    let mut cells = Vec::new();
                    if !tag.self_closing {
                        self.parse_row(&mut cells)?;
                    }
                    rows.push(cells);
                }
                _ => {
                    return self.err(format!(
                        "unexpected <{}{}>",
                        if tag.closing { "/" } else { "" },
                        tag.name
                    ))
                }
            }
        }
    }

    fn parse_row(&mut self, cells: &mut Vec<HtmlNode>) -> Result<(), HtmlError> {
        loop {
            self.skip_ws();
            if self.at_end() {
                return self.err("missing </tr>");
            }
            if !self.src[self.pos..].starts_with('<') {
                return self.err("text outside of a cell");
            }
            let tag = self.read_tag()?;
            match (tag.name.as_str(), tag.closing) {
                ("tr", true) => return Ok(()),
                ("td" | "th", false) => {
                    let text = if tag.self_closing {
                        None
                    } else {
                        Some(self.parse_cell_text()?)
                    };
                    cells.push(HtmlNode::td(tag.colspan, tag.rowspan, text));
                }
                _ => {
                    return self.err(format!(
                        "unexpected <{}{}> in row",
                        if tag.closing { "/" } else { "" },
                        tag.name
                    ))
                }
            }
        }
    }

    fn parse_cell_text(&mut self) -> Result<String, HtmlError> {
        let mut text = String::new();
        loop {
            let rest = &self.src[self.pos..];
            let Some(lt) = rest.find('<') else {
                return self.err("missing </td>");
            };
            decode_entities(&rest[..lt], &mut text);
            self.pos += lt;
            let tag = self.read_tag()?;
            match tag.name.as_str() {
                "td" | "th" if tag.closing => return Ok(text),
                "td" | "th" | "tr" | "table" | "thead" | "tbody" => {
                    return self.err(format!("unexpected <{}> inside a cell", tag.name));
                }
                _ => {}
            }
        }
    }
}

fn decode_entities(raw: &str, out: &mut String) {
    let mut rest = raw;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let decoded = rest.find(';').and_then(|semi| {
            let name = &rest[1..semi];
            let ch = match name {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some('\u{a0}'),
                _ => name
                    .strip_prefix("#x")
                    .or_else(|| name.strip_prefix("#X"))
                    .and_then(|h| u32::from_str_radix(h, 16).ok())
                    .or_else(|| name.strip_prefix('#').and_then(|d| d.parse().ok()))
                    .and_then(char::from_u32),
            };
            ch.map(|c| (c, semi + 1))
        });
        match decoded {
            Some((c, used)) => {
                out.push(c);
                rest = &rest[used..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
}
