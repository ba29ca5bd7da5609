//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use tablestruct::codec::{HtmlNode, HtmlTree, NodeKind};

/// A tree flattened in preorder: each node's label and the preorder index one
/// past its subtree.
pub struct Preorder<L> {
    pub labels: Vec<L>,
    pub end: Vec<usize>,
}

impl<L> Preorder<L> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    fn is_ancestor(&self, a: usize, b: usize) -> bool {
        a < b && b < self.end[a]
    }
}

pub fn preorder<N, L>(root: &N, children: &dyn Fn(&N) -> &[N], label: &dyn Fn(&N) -> L) -> Preorder<L> {
    fn go<N, L>(n: &N, children: &dyn Fn(&N) -> &[N], label: &dyn Fn(&N) -> L, out: &mut Preorder<L>) {
        let at = out.labels.len();
        out.labels.push(label(n));
        out.end.push(0);
        for c in children(n) {
            go(c, children, label, out);
        }
        out.end[at] = out.labels.len();
    }
    let mut out = Preorder {
        labels: Vec::new(),
        end: Vec::new(),
    };
    go(root, children, label, &mut out);
    out
}

/// Minimum edit cost by exhaustive search over every valid edit mapping:
/// one-to-one node pairs that preserve both ancestry and sibling order.
/// Unmapped nodes of `a` are deleted, unmapped nodes of `b` inserted.
pub fn brute_force_ted<L>(
    a: &Preorder<L>,
    b: &Preorder<L>,
    del: &dyn Fn(&L) -> f64,
    ins: &dyn Fn(&L) -> f64,
    sub: &dyn Fn(&L, &L) -> f64,
) -> f64 {
    let mut best = f64::INFINITY;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    search(a, b, 0, &mut pairs, del, ins, sub, &mut best);
    best
}

#[allow(clippy::too_many_arguments)]
fn search<L>(
    a: &Preorder<L>,
    b: &Preorder<L>,
    i: usize,
    pairs: &mut Vec<(usize, usize)>,
    del: &dyn Fn(&L) -> f64,
    ins: &dyn Fn(&L) -> f64,
    sub: &dyn Fn(&L, &L) -> f64,
    best: &mut f64,
) {
    if i == a.len() {
        let mut cost = 0.0;
        let mut used_a = vec![false; a.len()];
        let mut used_b = vec![false; b.len()];
        for &(x, y) in pairs.iter() {
            cost += sub(&a.labels[x], &b.labels[y]);
            used_a[x] = true;
            used_b[y] = true;
        }
        cost += (0..a.len())
            .filter(|&x| !used_a[x])
            .map(|x| del(&a.labels[x]))
            .sum::<f64>();
        cost += (0..b.len())
            .filter(|&y| !used_b[y])
            .map(|y| ins(&b.labels[y]))
            .sum::<f64>();
        if cost < *best {
            *best = cost;
        }
        return;
    }
    search(a, b, i + 1, pairs, del, ins, sub, best);
    let floor = pairs.last().map_or(0, |&(_, y)| y + 1);
    for j in floor..b.len() {
        // Earlier pairs come first in preorder on both sides; the relation
        // (ancestor or left sibling branch) must also agree.
        let ok = pairs.iter().all(|&(x, y)| a.is_ancestor(x, i) == b.is_ancestor(y, j));
        if ok {
            pairs.push((i, j));
            search(a, b, i + 1, pairs, del, ins, sub, best);
            pairs.pop();
        }
    }
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let s = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + s);
        }
    }
    d[a.len()][b.len()]
}

/// Label used for table trees: kind, spans and text.
pub type HtmlLabel = (NodeKind, usize, usize, String);

pub fn html_preorder(tree: &HtmlTree, with_text: bool) -> Preorder<HtmlLabel> {
    preorder(tree.root(), &|n: &HtmlNode| n.children.as_slice(), &|n: &HtmlNode| {
        let text = if with_text {
            n.text_or_empty().to_string()
        } else {
            String::new()
        };
        (n.kind, n.colspan, n.rowspan, text)
    })
}

pub fn html_sub(a: &HtmlLabel, b: &HtmlLabel) -> f64 {
    if a.0 != b.0 {
        return 1.0;
    }
    if a.0 != NodeKind::Td {
        return 0.0;
    }
    if (a.1, a.2) != (b.1, b.2) {
        return 1.0;
    }
    let longest = a.3.chars().count().max(b.3.chars().count());
    if longest == 0 {
        0.0
    } else {
        levenshtein(&a.3, &b.3) as f64 / longest as f64
    }
}

pub fn brute_force_html(a: &HtmlTree, b: &HtmlTree, with_text: bool) -> f64 {
    brute_force_ted(
        &html_preorder(a, with_text),
        &html_preorder(b, with_text),
        &|_| 1.0,
        &|_| 1.0,
        &html_sub,
    )
}

const TEXTS: [&str; 6] = ["", "a", "ab", "ba", "abc", "x"];

/// A random table tree with at most `max_nodes` nodes (root included).
pub fn random_html_tree<R: Rng>(rng: &mut R, max_nodes: usize) -> HtmlTree {
    let mut budget = rng.gen_range(1..=max_nodes) - 1;
    let mut rows = Vec::new();
    while budget > 0 {
        budget -= 1;
        let n_td = rng.gen_range(0..=budget);
        budget -= n_td;
        let tds = (0..n_td)
            .map(|_| {
                let text = match rng.gen_range(0..TEXTS.len() + 1) {
                    0 => None,
                    k => Some(TEXTS[k - 1].to_string()),
                };
                HtmlNode::td(rng.gen_range(1..=2), rng.gen_range(1..=2), text)
            })
            .collect();
        rows.push(tds);
    }
    HtmlTree::from_rows(rows).unwrap()
}

/// A general labeled ordered tree.
#[derive(Debug, Clone)]
pub struct Node {
    pub label: u8,
    pub children: Vec<Node>,
}

pub fn random_tree<R: Rng>(rng: &mut R, max_nodes: usize) -> Node {
    let n = rng.gen_range(1..=max_nodes);
    // Attach node k under a random earlier node, then rebuild nested form.
    let parents: Vec<usize> = (1..n).map(|k| rng.gen_range(0..k)).collect();
    let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..3)).collect();
    fn build(k: usize, parents: &[usize], labels: &[u8]) -> Node {
        let children = (1..=parents.len())
            .filter(|&c| parents[c - 1] == k)
            .map(|c| build(c, parents, labels))
            .collect();
        Node {
            label: labels[k],
            children,
        }
    }
    build(0, &parents, &labels)
}

pub fn node_preorder(root: &Node) -> Preorder<u8> {
    preorder(root, &|n: &Node| n.children.as_slice(), &|n: &Node| n.label)
}

/// Central differences, written out independently of the library.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            p[i] += h;
            let up = f(&p);
            p[i] -= 2.0 * h;
            let down = f(&p);
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Supervised contrastive loss for anchor `j` over candidates `a_set` and
/// positives `p_set`, straight from the textbook formula.
pub fn supcon_anchor(emb: &[Vec<f64>], j: usize, a_set: &[usize], p_set: &[usize], tau: f64) -> f64 {
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    let denom: f64 = a_set.iter().map(|&a| (dot(&emb[j], &emb[a]) / tau).exp()).sum();
    -p_set
        .iter()
        .map(|&p| ((dot(&emb[j], &emb[p]) / tau).exp() / denom).ln())
        .sum::<f64>()
        / p_set.len() as f64
}
