//! Regression trees grown level by level on presorted feature columns.
//!
//! The grower consumes per-row gradients and hessians, so the same machinery
//! serves any twice-differentiable loss. Split gain is the standard
//! second-order criterion with a leaf regularizer added to each hessian sum,
//! thresholds are midpoints between adjacent distinct values, and rows with
//! a missing (NaN) feature always travel to the left child.

use serde::{Deserialize, Serialize};

use crate::matrix::DenseMatrix;
use crate::num::Real;

/// One node of a fitted tree; the tree lives in a flat arena with the root
/// at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node<T> {
    Split { feature: usize, value: T, left: usize, right: usize },
    Leaf { value: T, n_rows: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tree<T> {
    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn predict_row(&self, row: &[T]) -> T {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value, .. } => return *value,
                Node::Split { feature, value, left, right } => {
                    let v = row[*feature];
                    at = if v.is_nan() || v < *value { *left } else { *right };
                }
            }
        }
    }

    pub fn max_depth(&self) -> usize {
        self.depth_below(0)
    }

    fn depth_below(&self, at: usize) -> usize {
        match &self.nodes[at] {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => {
                1 + self.depth_below(*left).max(self.depth_below(*right))
            }
        }
    }

    /// Visits every leaf as `(value, training-row count)`.
    pub fn for_each_leaf(&self, mut f: impl FnMut(T, usize)) {
        for node in &self.nodes {
            if let Node::Leaf { value, n_rows } = node {
                f(*value, *n_rows);
            }
        }
    }
}

/// Row ids of every feature column sorted by value, missing entries first,
/// ties in row order. Computed once per training matrix and shared by all
/// trees fitted on it.
#[derive(Debug, Clone)]
pub struct SortedColumns {
    per_feature: Vec<Vec<u32>>,
}

impl SortedColumns {
    pub fn column(&self, f: usize) -> &[u32] {
        &self.per_feature[f]
    }
}

pub fn presort<T: Real>(x: &DenseMatrix<T>) -> SortedColumns {
    let per_feature = (0..x.n_cols())
        .map(|f| {
            let mut ids: Vec<u32> = (0..x.n_rows() as u32).collect();
            ids.sort_by(|&a, &b| {
                let va = x.get(a as usize, f);
                let vb = x.get(b as usize, f);
                match (va.is_nan(), vb.is_nan()) {
                    (true, true) => a.cmp(&b),
                    (true, false) => std::cmp::Ordering::Less,
                    (false, true) => std::cmp::Ordering::Greater,
                    (false, false) => {
                        va.partial_cmp(&vb).expect("finite values").then(a.cmp(&b))
                    }
                }
            });
            ids
        })
        .collect();
    SortedColumns { per_feature }
}

/// Growth limits and regularizers for one tree.
#[derive(Debug, Clone)]
pub struct GrowSpec<T> {
    pub max_depth: usize,
    pub min_rows: usize,
    pub leaf_eps: T,
    pub min_gain: T,
}

#[derive(Debug, Clone, Copy)]
struct ActiveNode<T> {
    arena: usize,
    g: T,
    h: T,
    n: usize,
}

#[derive(Debug, Clone, Copy)]
struct BestSplit<T> {
    gain: T,
    feature: usize,
    value: T,
    g_left: T,
    h_left: T,
    n_left: usize,
}

enum Action<T> {
    Finish,
    Split { feature: usize, value: T, left_slot: u32, right_slot: u32 },
}

const DEAD: u32 = u32::MAX;

/// Fits one regression tree on the rows in `rows`, considering only the
/// feature indices in `features` (ascending). Ties in split gain keep the
/// earliest candidate in (feature, value) order, which makes the structure
/// independent of evaluation schedule.
pub fn grow_tree<T: Real>(
    x: &DenseMatrix<T>,
    cols: &SortedColumns,
    grad: &[T],
    hess: &[T],
    rows: &[u32],
    features: &[usize],
    spec: &GrowSpec<T>,
) -> Tree<T> {
    debug_assert_eq!(grad.len(), x.n_rows());
    debug_assert_eq!(hess.len(), x.n_rows());
    let eps = spec.leaf_eps;
    let mut in_node: Vec<u32> = vec![DEAD; x.n_rows()];
    let mut g0 = T::zero();
    let mut h0 = T::zero();
    for &r in rows {
        in_node[r as usize] = 0;
        g0 = g0 + grad[r as usize];
        h0 = h0 + hess[r as usize];
    }
    let mut nodes = vec![Node::Leaf { value: T::zero(), n_rows: rows.len() }];
    let mut frontier = vec![ActiveNode { arena: 0, g: g0, h: h0, n: rows.len() }];

    let mut depth = 0usize;
    while !frontier.is_empty() {
        let can_split: Vec<bool> = frontier
            .iter()
            .map(|a| depth < spec.max_depth && a.n >= 2 * spec.min_rows)
            .collect();
        let mut best: Vec<Option<BestSplit<T>>> = vec![None; frontier.len()];

        if can_split.iter().any(|&b| b) {
            let m = frontier.len();
            let mut gl = vec![T::zero(); m];
            let mut hl = vec![T::zero(); m];
            let mut nl = vec![0usize; m];
            let mut last = vec![T::nan(); m];
            for &f in features {
                for s in 0..m {
                    gl[s] = T::zero();
                    hl[s] = T::zero();
                    nl[s] = 0;
                    last[s] = T::nan();
                }
                for &r in cols.column(f) {
                    let slot = in_node[r as usize];
                    if slot == DEAD {
                        continue;
                    }
                    let s = slot as usize;
                    if !can_split[s] {
                        continue;
                    }
                    let v = x.get(r as usize, f);
                    if nl[s] > 0 && v > last[s] {
                        let mid = (last[s] + v) / T::of(2.0);
                        // A midpoint that rounds onto the lower value cannot
                        // separate the two, so it is not a candidate.
                        if mid > last[s] {
                            let node = &frontier[s];
                            let n_right = node.n - nl[s];
                            if nl[s] >= spec.min_rows && n_right >= spec.min_rows {
                                let gr = node.g - gl[s];
                                let hr = node.h - hl[s];
                                let gain = gl[s] * gl[s] / (hl[s] + eps)
                                    + gr * gr / (hr + eps)
                                    - node.g * node.g / (node.h + eps);
                                if best[s].map_or(true, |b| gain > b.gain) {
                                    best[s] = Some(BestSplit {
                                        gain,
                                        feature: f,
                                        value: mid,
                                        g_left: gl[s],
                                        h_left: hl[s],
                                        n_left: nl[s],
                                    });
                                }
                            }
                        }
                    }
                    gl[s] = gl[s] + grad[r as usize];
                    hl[s] = hl[s] + hess[r as usize];
                    nl[s] += 1;
                    if !v.is_nan() {
                        last[s] = v;
                    }
                }
            }
        }

        let mut next = Vec::new();
        let mut actions: Vec<Action<T>> = Vec::with_capacity(frontier.len());
        for (s, active) in frontier.iter().enumerate() {
            let chosen = match (can_split[s], best[s]) {
                (true, Some(b)) if b.gain > spec.min_gain => Some(b),
                _ => None,
            };
            match chosen {
                Some(b) => {
                    let left = nodes.len();
                    nodes.push(Node::Leaf { value: T::zero(), n_rows: 0 });
                    let right = nodes.len();
                    nodes.push(Node::Leaf { value: T::zero(), n_rows: 0 });
                    nodes[active.arena] =
                        Node::Split { feature: b.feature, value: b.value, left, right };
                    let left_slot = next.len() as u32;
                    next.push(ActiveNode { arena: left, g: b.g_left, h: b.h_left, n: b.n_left });
                    let right_slot = next.len() as u32;
                    next.push(ActiveNode {
                        arena: right,
                        g: active.g - b.g_left,
                        h: active.h - b.h_left,
                        n: active.n - b.n_left,
                    });
                    actions.push(Action::Split {
                        feature: b.feature,
                        value: b.value,
                        left_slot,
                        right_slot,
                    });
                }
                None => {
                    nodes[active.arena] =
                        Node::Leaf { value: -active.g / (active.h + eps), n_rows: active.n };
                    actions.push(Action::Finish);
                }
            }
        }
        for &r in rows {
            let slot = in_node[r as usize];
            if slot == DEAD {
                continue;
            }
            match &actions[slot as usize] {
                Action::Finish => in_node[r as usize] = DEAD,
                Action::Split { feature, value, left_slot, right_slot } => {
                    let v = x.get(r as usize, *feature);
                    in_node[r as usize] =
                        if v.is_nan() || v < *value { *left_slot } else { *right_slot };
                }
            }
        }
        frontier = next;
        depth += 1;
    }
    Tree { nodes }
}
