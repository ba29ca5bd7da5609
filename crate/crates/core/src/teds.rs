//! Tree-edit-distance similarity between table trees.
//!
//! `TEDS(a, b) = 1 - dist(a, b) / max(|a|, |b|)` where `dist` is the exact
//! ordered tree edit distance (Zhang–Shasha dynamic programme) and `|t|` counts
//! element nodes. Cell text is part of the `td` node's label, not a node.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{HtmlNode, HtmlTree, NodeKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TedsError {
    #[error("both trees are empty; similarity is undefined")]
    BothEmpty,
}

/// Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance divided by the longer length; 0 for two empty strings.
pub fn normalized_levenshtein(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        0.0
    } else {
        levenshtein(a, b) as f64 / longest as f64
    }
}

/// Node costs for the edit distance.
///
/// Renaming costs 1 when tags differ or a `td`'s spans differ. Between `td`
/// nodes with equal spans it costs the normalized Levenshtein distance of
/// their text when `content_aware` is set, else 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub insert_cost: f64,
    pub delete_cost: f64,
    pub content_aware: bool,
}

impl CostModel {
    pub const fn content_aware() -> Self {
        Self {
            insert_cost: 1.0,
            delete_cost: 1.0,
            content_aware: true,
        }
    }

    pub const fn structure_only() -> Self {
        Self {
            insert_cost: 1.0,
            delete_cost: 1.0,
            content_aware: false,
        }
    }

    pub fn substitution(&self, a: &HtmlNode, b: &HtmlNode) -> f64 {
        if a.kind != b.kind {
            return 1.0;
        }
        if a.kind != NodeKind::Td {
            return 0.0;
        }
        if a.colspan != b.colspan || a.rowspan != b.rowspan {
            return 1.0;
        }
        if self.content_aware {
            normalized_levenshtein(a.text_or_empty(), b.text_or_empty())
        } else {
            0.0
        }
    }
}

impl Default for CostModel {
    fn default() -> Self {
        Self::content_aware()
    }
}

/// An ordered tree flattened in postorder, with each node's leftmost leaf.
#[derive(Debug, Clone)]
pub struct PostorderTree<T> {
    nodes: Vec<T>,
    leftmost: Vec<usize>,
}

impl<T> PostorderTree<T> {
    /// Flattens a tree given its root and a child accessor.
    pub fn build<'a, N: 'a>(root: &'a N, children: impl Fn(&'a N) -> &'a [N], label: impl Fn(&'a N) -> T) -> Self {
        let mut tree = Self {
            nodes: Vec::new(),
            leftmost: Vec::new(),
        };
        tree.visit(root, &children, &label);
        tree
    }

    fn visit<'a, N: 'a>(
        &mut self,
        node: &'a N,
        children: &impl Fn(&'a N) -> &'a [N],
        label: &impl Fn(&'a N) -> T,
    ) -> usize {
        let mut first_leaf = None;
        for child in children(node) {
            let child_idx = self.visit(child, children, label);
            first_leaf.get_or_insert(self.leftmost[child_idx]);
        }
        let idx = self.nodes.len();
        self.nodes.push(label(node));
        self.leftmost.push(first_leaf.unwrap_or(idx));
        idx
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    /// Postorder index of the leftmost leaf below each node.
    pub fn leftmost(&self) -> &[usize] {
        &self.leftmost
    }

    fn keyroots(&self) -> Vec<usize> {
        let mut seen = vec![false; self.nodes.len()];
        let mut roots = Vec::new();
        for i in (0..self.nodes.len()).rev() {
            let l = self.leftmost[i];
            if !seen[l] {
                seen[l] = true;
                roots.push(i);
            }
        }
        roots.reverse();
        roots
    }
}

/// Exact ordered tree edit distance (Zhang–Shasha).
pub fn zhang_shasha<T>(
    a: &PostorderTree<T>,
    b: &PostorderTree<T>,
    delete: impl Fn(&T) -> f64,
    insert: impl Fn(&T) -> f64,
    substitute: impl Fn(&T, &T) -> f64,
) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == 0 {
        return b.nodes.iter().map(&insert).sum();
    }
    if m == 0 {
        return a.nodes.iter().map(&delete).sum();
    }
    let mut tree_dist = vec![0.0; n * m];
    let mut forest = vec![0.0; (n + 1) * (m + 1)];
    let a_roots = a.keyroots();
    let b_roots = b.keyroots();
    for &i in &a_roots {
        for &j in &b_roots {
            let (li, lj) = (a.leftmost[i], b.leftmost[j]);
            let cols = j - lj + 2;
            let at = |x: usize, y: usize| x * cols + y;
            forest[at(0, 0)] = 0.0;
            for x in li..=i {
                forest[at(x - li + 1, 0)] = forest[at(x - li, 0)] + delete(&a.nodes[x]);
            }
            for y in lj..=j {
                forest[at(0, y - lj + 1)] = forest[at(0, y - lj)] + insert(&b.nodes[y]);
            }
            for x in li..=i {
                let fx = x - li + 1;
                let del_x = delete(&a.nodes[x]);
                for y in lj..=j {
                    let fy = y - lj + 1;
                    let via_del = forest[at(fx - 1, fy)] + del_x;
                    let via_ins = forest[at(fx, fy - 1)] + insert(&b.nodes[y]);
                    let best = if a.leftmost[x] == li && b.leftmost[y] == lj {
                        let via_sub = forest[at(fx - 1, fy - 1)] + substitute(&a.nodes[x], &b.nodes[y]);
                        let d = via_del.min(via_ins).min(via_sub);
                        tree_dist[x * m + y] = d;
                        d
                    } else {
                        let via_tree = forest[at(a.leftmost[x] - li, b.leftmost[y] - lj)] + tree_dist[x * m + y];
                        via_del.min(via_ins).min(via_tree)
                    };
                    forest[at(fx, fy)] = best;
                }
            }
        }
    }
    tree_dist[(n - 1) * m + (m - 1)]
}

fn flatten(tree: &HtmlTree) -> PostorderTree<&HtmlNode> {
    PostorderTree::build(tree.root(), |n: &HtmlNode| n.children.as_slice(), |n| n)
}

/// Minimal edit cost between two table trees under `cost`.
pub fn tree_edit_distance(a: &HtmlTree, b: &HtmlTree, cost: &CostModel) -> f64 {
    zhang_shasha(
        &flatten(a),
        &flatten(b),
        |_| cost.delete_cost,
        |_| cost.insert_cost,
        |x, y| cost.substitution(x, y),
    )
}

fn similarity(pred: &HtmlTree, gt: &HtmlTree, cost: &CostModel) -> Result<f64, TedsError> {
    let denom = pred.node_count().max(gt.node_count());
    if denom == 0 {
        return Err(TedsError::BothEmpty);
    }
    let dist = tree_edit_distance(pred, gt, cost);
    Ok((1.0 - dist / denom as f64).clamp(0.0, 1.0))
}

/// Content-aware TEDS.
pub fn teds(pred: &HtmlTree, gt: &HtmlTree) -> Result<f64, TedsError> {
    similarity(pred, gt, &CostModel::content_aware())
}

/// TEDS with all cell text erased first.
pub fn teds_struct(pred: &HtmlTree, gt: &HtmlTree) -> Result<f64, TedsError> {
    similarity(&pred.without_text(), &gt.without_text(), &CostModel::content_aware())
}

/// Both scores for one pair, in the CLI's JSON shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TedsScores {
    pub teds: f64,
    pub teds_struct: f64,
}

pub fn score_pair(pred: &HtmlTree, gt: &HtmlTree) -> Result<TedsScores, TedsError> {
    Ok(TedsScores {
        teds: teds(pred, gt)?,
        teds_struct: teds_struct(pred, gt)?,
    })
}
