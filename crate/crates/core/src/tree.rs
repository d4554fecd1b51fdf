//! Binary decision trees and an exact greedy (CART-style) grower.
//!
//! Trees are stored as flat node arrays. A row goes left at a split when its
//! feature value is strictly below the threshold. The grower works level by
//! level over per-feature presorted row orders, so one presort serves every
//! tree fitted on the same design.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A node of a flat binary tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A binary tree; node 0 is the root and children always follow their parent.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    /// Builds a tree from raw nodes, checking that the array encodes exactly one
    /// binary tree rooted at node 0 with every child index after its parent.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Schema("tree has no nodes".into()));
        }
        let mut parents = vec![0usize; nodes.len()];
        for (id, node) in nodes.iter().enumerate() {
            match *node {
                Node::Leaf { value } => {
                    if !value.is_finite() {
                        return Err(Error::Schema(format!("leaf {id} has non-finite value")));
                    }
                }
                Node::Split {
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if threshold.is_nan() {
                        return Err(Error::Schema(format!("split {id} has NaN threshold")));
                    }
                    for child in [left, right] {
                        if child <= id || child >= nodes.len() {
                            return Err(Error::Schema(format!(
                                "node {id} has invalid child index {child}"
                            )));
                        }
                        parents[child] += 1;
                    }
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err(Error::Schema(
                "node array is not a single binary tree".into(),
            ));
        }
        Ok(Tree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Evaluates the tree; `feature(j)` returns the value of feature `j`.
    #[inline]
    pub fn predict(&self, feature: impl Fn(usize) -> f64) -> f64 {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature: j,
                    threshold,
                    left,
                    right,
                } => id = if feature(j) < threshold { left } else { right },
            }
        }
    }

    /// Largest feature index referenced by a split.
    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }

    pub fn leaf_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value } => Some(*value),
            Node::Split { .. } => None,
        })
    }

    pub fn num_leaves(&self) -> usize {
        self.leaf_values().count()
    }

    pub fn depth(&self) -> usize {
        fn rec(nodes: &[Node], id: usize) -> usize {
            match nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + rec(nodes, left).max(rec(nodes, right)),
            }
        }
        rec(&self.nodes, 0)
    }
}

/// Row-oriented read access to a feature matrix.
pub trait Design: Sync {
    fn num_rows(&self) -> usize;
    fn num_features(&self) -> usize;
    fn value(&self, row: usize, feature: usize) -> f64;
}

/// A dense row-major matrix.
#[derive(Clone, Debug)]
pub struct DenseDesign {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseDesign {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: values.len(),
            });
        }
        Ok(DenseDesign { rows, cols, values })
    }

    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut values = Vec::new();
        let mut cols = None;
        let mut n = 0;
        for row in rows {
            match cols {
                None => cols = Some(row.len()),
                Some(c) if c != row.len() => {
                    return Err(Error::DimensionMismatch {
                        expected: c,
                        found: row.len(),
                    })
                }
                _ => {}
            }
            values.extend_from_slice(row);
            n += 1;
        }
        DenseDesign::new(n, cols.unwrap_or(0), values)
    }
}

impl Design for DenseDesign {
    fn num_rows(&self) -> usize {
        self.rows
    }
    fn num_features(&self) -> usize {
        self.cols
    }
    #[inline]
    fn value(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.cols + feature]
    }
}

/// The expanded `[x_i; e_a]` design: row `i * num_actions + a`, never materialized.
#[derive(Clone, Debug)]
pub struct ActionDesign {
    contexts: Vec<f64>,
    feature_dim: usize,
    num_actions: usize,
}

impl ActionDesign {
    /// `contexts` is the row-major `n x feature_dim` context matrix.
    pub fn new(contexts: Vec<f64>, feature_dim: usize, num_actions: usize) -> Result<Self> {
        if feature_dim == 0 && !contexts.is_empty() || feature_dim > 0 && contexts.len() % feature_dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: feature_dim,
                found: contexts.len(),
            });
        }
        Ok(ActionDesign {
            contexts,
            feature_dim,
            num_actions,
        })
    }

    pub fn num_contexts(&self) -> usize {
        if self.feature_dim == 0 {
            0
        } else {
            self.contexts.len() / self.feature_dim
        }
    }

    pub fn context(&self, i: usize) -> &[f64] {
        &self.contexts[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
}

impl Design for ActionDesign {
    fn num_rows(&self) -> usize {
        self.num_contexts() * self.num_actions
    }
    fn num_features(&self) -> usize {
        self.feature_dim + self.num_actions
    }
    #[inline]
    fn value(&self, row: usize, feature: usize) -> f64 {
        let i = row / self.num_actions;
        let a = row % self.num_actions;
        augmented_feature(&self.contexts[i * self.feature_dim..(i + 1) * self.feature_dim], a, feature)
    }
}

/// Feature `j` of `[x; e_a]`.
#[inline]
pub fn augmented_feature(x: &[f64], action: usize, j: usize) -> f64 {
    if j < x.len() {
        x[j]
    } else if j - x.len() == action {
        1.0
    } else {
        0.0
    }
}

/// Per-feature row orders sorted by value (ties by row index).
#[derive(Clone, Debug)]
pub struct SortedIndex {
    num_rows: usize,
    orders: Vec<Vec<u32>>,
    values: Vec<Vec<f64>>,
}

impl SortedIndex {
    pub fn build<D: Design>(design: &D) -> Self {
        let n = design.num_rows();
        assert!(n <= u32::MAX as usize, "too many rows for the sorted index");
        let (orders, values): (Vec<_>, Vec<_>) = (0..design.num_features())
            .into_par_iter()
            .map(|j| {
                let mut order: Vec<u32> = (0..n as u32).collect();
                order.sort_by(|&a, &b| {
                    design
                        .value(a as usize, j)
                        .total_cmp(&design.value(b as usize, j))
                });
                let vals = order.iter().map(|&r| design.value(r as usize, j)).collect();
                (order, vals)
            })
            .unzip();
        SortedIndex {
            num_rows: n,
            orders,
            values,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }
}

/// Structural hyperparameters shared by both tree learners.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub reg_lambda: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 6,
            min_child_weight: 1.0,
            reg_lambda: 0.0,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return Err(Error::InvalidConfig("min_child_weight must be >= 0".into()));
        }
        if !(self.reg_lambda >= 0.0 && self.reg_lambda.is_finite()) {
            return Err(Error::InvalidConfig("reg_lambda must be >= 0".into()));
        }
        Ok(())
    }
}

/// Split statistics of a tree learner.
pub(crate) trait Criterion: Sync {
    type Acc: Copy + Default + Send;
    fn row_weight(&self, row: usize) -> f64;
    fn add(&self, acc: &mut Self::Acc, row: usize);
    fn sub(total: &Self::Acc, part: &Self::Acc) -> Self::Acc;
    fn weight(acc: &Self::Acc) -> f64;
    /// Improvement of splitting `parent` into `left` and `right`; `last_level`
    /// is true when both children are forced to be leaves.
    fn gain(&self, parent: &Self::Acc, left: &Self::Acc, right: &Self::Acc, last_level: bool) -> f64;
    fn leaf_value(&self, acc: &Self::Acc) -> f64;
}

/// Weighted squared error with ridge-shrunk leaves.
pub(crate) struct SquaredError<'a> {
    pub weights: &'a [f64],
    pub weighted_targets: &'a [f64],
    pub reg_lambda: f64,
}

#[derive(Clone, Copy, Default)]
pub(crate) struct SumAcc {
    w: f64,
    wy: f64,
}

impl Criterion for SquaredError<'_> {
    type Acc = SumAcc;
    #[inline]
    fn row_weight(&self, row: usize) -> f64 {
        self.weights[row]
    }
    #[inline]
    fn add(&self, acc: &mut SumAcc, row: usize) {
        acc.w += self.weights[row];
        acc.wy += self.weighted_targets[row];
    }
    #[inline]
    fn sub(total: &SumAcc, part: &SumAcc) -> SumAcc {
        SumAcc {
            w: total.w - part.w,
            wy: total.wy - part.wy,
        }
    }
    #[inline]
    fn weight(acc: &SumAcc) -> f64 {
        acc.w
    }
    #[inline]
    fn gain(&self, parent: &SumAcc, left: &SumAcc, right: &SumAcc, _: bool) -> f64 {
        let score = |a: &SumAcc| a.wy * a.wy / (a.w + self.reg_lambda);
        score(left) + score(right) - score(parent)
    }
    fn leaf_value(&self, acc: &SumAcc) -> f64 {
        let denom = acc.w + self.reg_lambda;
        if denom > 0.0 {
            acc.wy / denom
        } else {
            0.0
        }
    }
}

/// Weighted binary classification: Gini for inner levels, weighted
/// misclassification for the level whose children are final leaves.
pub(crate) struct BinaryGini<'a> {
    pub pos: &'a [f64],
    pub neg: &'a [f64],
}

#[derive(Clone, Copy, Default)]
pub(crate) struct ClassAcc {
    pos: f64,
    neg: f64,
}

impl Criterion for BinaryGini<'_> {
    type Acc = ClassAcc;
    #[inline]
    fn row_weight(&self, row: usize) -> f64 {
        self.pos[row] + self.neg[row]
    }
    #[inline]
    fn add(&self, acc: &mut ClassAcc, row: usize) {
        acc.pos += self.pos[row];
        acc.neg += self.neg[row];
    }
    #[inline]
    fn sub(total: &ClassAcc, part: &ClassAcc) -> ClassAcc {
        ClassAcc {
            pos: total.pos - part.pos,
            neg: total.neg - part.neg,
        }
    }
    #[inline]
    fn weight(acc: &ClassAcc) -> f64 {
        acc.pos + acc.neg
    }
    #[inline]
    fn gain(&self, parent: &ClassAcc, left: &ClassAcc, right: &ClassAcc, last_level: bool) -> f64 {
        if last_level {
            let err = |a: &ClassAcc| a.pos.min(a.neg);
            err(parent) - err(left) - err(right)
        } else {
            let gini = |a: &ClassAcc| {
                let w = a.pos + a.neg;
                if w > 0.0 {
                    2.0 * a.pos * a.neg / w
                } else {
                    0.0
                }
            };
            gini(parent) - gini(left) - gini(right)
        }
    }
    fn leaf_value(&self, acc: &ClassAcc) -> f64 {
        if acc.pos - acc.neg >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Candidate<A> {
    node: usize,
    total: A,
    left: A,
    last: f64,
    seen: bool,
    best_gain: f64,
    best_feature: usize,
    best_threshold: f64,
    best_left: A,
}

#[inline]
fn midpoint(lo: f64, hi: f64) -> f64 {
    let t = lo / 2.0 + hi / 2.0;
    if t > lo {
        t
    } else {
        hi
    }
}

/// Grows one tree greedily, level by level. Rows with zero weight are ignored.
pub(crate) fn grow<D: Design, C: Criterion>(
    design: &D,
    index: &SortedIndex,
    criterion: &C,
    params: &TreeParams,
) -> Result<Tree> {
    params.validate()?;
    let n = design.num_rows();
    if index.num_rows != n || index.orders.len() != design.num_features() {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: index.num_rows,
        });
    }
    let mut node_of = vec![NONE; n];
    let mut root = C::Acc::default();
    for (r, slot) in node_of.iter_mut().enumerate() {
        if criterion.row_weight(r) > 0.0 {
            *slot = 0;
            criterion.add(&mut root, r);
        }
    }
    if !(C::weight(&root) > 0.0) {
        return Err(Error::ZeroTotalWeight);
    }
    let mut nodes = vec![Node::Leaf {
        value: criterion.leaf_value(&root),
    }];
    if params.max_depth == 0 {
        return Ok(Tree { nodes });
    }

    let mcw = params.min_child_weight;
    let mut orders: Vec<Vec<u32>> = Vec::with_capacity(index.orders.len());
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(index.orders.len());
    for (ord, val) in index.orders.iter().zip(&index.values) {
        let mut o = Vec::with_capacity(ord.len());
        let mut v = Vec::with_capacity(ord.len());
        for (&r, &x) in ord.iter().zip(val) {
            if node_of[r as usize] != NONE {
                o.push(r);
                v.push(x);
            }
        }
        orders.push(o);
        values.push(v);
    }

    let mut frontier: Vec<(usize, C::Acc)> = vec![(0, root)];
    for depth in 0..params.max_depth {
        let last_level = depth + 1 == params.max_depth;
        let mut slot_of = vec![NONE; nodes.len()];
        let mut cands: Vec<Candidate<C::Acc>> = Vec::new();
        for &(node, total) in &frontier {
            let w = C::weight(&total);
            if w * (1.0 + 1e-9) < 2.0 * mcw {
                continue;
            }
            slot_of[node] = cands.len() as u32;
            cands.push(Candidate {
                node,
                total,
                left: C::Acc::default(),
                last: 0.0,
                seen: false,
                best_gain: 0.0,
                best_feature: 0,
                best_threshold: 0.0,
                best_left: C::Acc::default(),
            });
        }
        if cands.is_empty() {
            break;
        }

        for (f, (ord, val)) in orders.iter_mut().zip(values.iter_mut()).enumerate() {
            for c in cands.iter_mut() {
                c.left = C::Acc::default();
                c.seen = false;
            }
            let mut write = 0;
            for k in 0..ord.len() {
                let r = ord[k];
                let node = node_of[r as usize];
                let s = slot_of[node as usize];
                if s == NONE {
                    continue;
                }
                let v = val[k];
                ord[write] = r;
                val[write] = v;
                write += 1;
                let c = &mut cands[s as usize];
                if c.seen && v > c.last {
                    let right = C::sub(&c.total, &c.left);
                    if C::weight(&c.left) >= mcw && C::weight(&right) >= mcw {
                        let g = criterion.gain(&c.total, &c.left, &right, last_level);
                        if g > c.best_gain {
                            c.best_gain = g;
                            c.best_feature = f;
                            c.best_threshold = midpoint(c.last, v);
                            c.best_left = c.left;
                        }
                    }
                }
                criterion.add(&mut c.left, r as usize);
                c.last = v;
                c.seen = true;
            }
            ord.truncate(write);
            val.truncate(write);
        }

        let mut next = Vec::new();
        let mut split_to: Vec<Option<(usize, f64, u32, u32)>> = vec![None; nodes.len()];
        for c in &cands {
            if !(c.best_gain > 0.0) {
                continue;
            }
            let left_acc = c.best_left;
            let right_acc = C::sub(&c.total, &left_acc);
            let left = nodes.len();
            nodes.push(Node::Leaf {
                value: criterion.leaf_value(&left_acc),
            });
            let right = nodes.len();
            nodes.push(Node::Leaf {
                value: criterion.leaf_value(&right_acc),
            });
            nodes[c.node] = Node::Split {
                feature: c.best_feature,
                threshold: c.best_threshold,
                left,
                right,
            };
            split_to[c.node] = Some((c.best_feature, c.best_threshold, left as u32, right as u32));
            next.push((left, left_acc));
            next.push((right, right_acc));
        }
        if next.is_empty() {
            break;
        }
        for (r, slot) in node_of.iter_mut().enumerate() {
            if *slot == NONE {
                continue;
            }
            if let Some((f, t, l, rt)) = split_to[*slot as usize] {
                *slot = if design.value(r, f) < t { l } else { rt };
            }
        }
        frontier = next;
    }
    Ok(Tree { nodes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn regression(design: &DenseDesign, w: &[f64], y: &[f64], params: TreeParams) -> Tree {
        let wy: Vec<f64> = w.iter().zip(y).map(|(a, b)| a * b).collect();
        let crit = SquaredError {
            weights: w,
            weighted_targets: &wy,
            reg_lambda: params.reg_lambda,
        };
        grow(design, &SortedIndex::build(design), &crit, &params).unwrap()
    }

    #[test]
    fn from_nodes_rejects_malformed_arrays() {
        assert!(Tree::from_nodes(vec![]).is_err());
        let cyclic = vec![Node::Split {
            feature: 0,
            threshold: 0.0,
            left: 0,
            right: 0,
        }];
        assert!(Tree::from_nodes(cyclic).is_err());
        let orphan = vec![Node::Leaf { value: 1.0 }, Node::Leaf { value: 2.0 }];
        assert!(Tree::from_nodes(orphan).is_err());
        let ok = vec![
            Node::Split {
                feature: 1,
                threshold: 0.5,
                left: 1,
                right: 2,
            },
            Node::Leaf { value: -1.0 },
            Node::Leaf { value: 1.0 },
        ];
        let t = Tree::from_nodes(ok).unwrap();
        assert_eq!(t.predict(|_| 0.0), -1.0);
        assert_eq!(t.predict(|_| 0.5), 1.0);
        assert_eq!(t.max_feature(), Some(1));
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn step_function_is_recovered() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let d = DenseDesign::new(6, 1, xs.to_vec()).unwrap();
        let y = [1.0, 1.0, 1.0, 5.0, 5.0, 5.0];
        let t = regression(
            &d,
            &[1.0; 6],
            &y,
            TreeParams {
                max_depth: 3,
                min_child_weight: 0.0,
                reg_lambda: 0.0,
            },
        );
        assert_eq!(t.depth(), 1);
        for (x, y) in xs.iter().zip(y) {
            assert_eq!(t.predict(|_| *x), y);
        }
        match t.nodes()[0] {
            Node::Split { threshold, .. } => assert_eq!(threshold, 2.5),
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn zero_weight_rows_are_ignored() {
        let d = DenseDesign::new(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let t = regression(
            &d,
            &[1.0, 1.0, 0.0, 0.0],
            &[2.0, 2.0, 100.0, -100.0],
            TreeParams {
                max_depth: 2,
                min_child_weight: 0.0,
                reg_lambda: 0.0,
            },
        );
        assert_eq!(t.num_leaves(), 1);
        assert_eq!(t.predict(|_| 3.0), 2.0);
    }

    #[test]
    fn min_child_weight_blocks_small_leaves() {
        let d = DenseDesign::new(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let t = regression(
            &d,
            &[1.0; 4],
            &[0.0, 0.0, 0.0, 9.0],
            TreeParams {
                max_depth: 2,
                min_child_weight: 2.0,
                reg_lambda: 0.0,
            },
        );
        assert_eq!(t.depth(), 1);
        match t.nodes()[0] {
            Node::Split { threshold, .. } => assert_eq!(threshold, 1.5),
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn all_zero_weights_error() {
        let d = DenseDesign::new(2, 1, vec![0.0, 1.0]).unwrap();
        let crit = SquaredError {
            weights: &[0.0, 0.0],
            weighted_targets: &[0.0, 0.0],
            reg_lambda: 0.0,
        };
        let r = grow(&d, &SortedIndex::build(&d), &crit, &TreeParams::default());
        assert!(matches!(r, Err(Error::ZeroTotalWeight)));
    }

    #[test]
    fn adjacent_floats_split_correctly() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let d = DenseDesign::new(2, 1, vec![a, b]).unwrap();
        let t = regression(
            &d,
            &[1.0, 1.0],
            &[0.0, 1.0],
            TreeParams {
                max_depth: 1,
                min_child_weight: 0.0,
                reg_lambda: 0.0,
            },
        );
        assert_eq!(t.predict(|_| a), 0.0);
        assert_eq!(t.predict(|_| b), 1.0);
    }

    #[test]
    fn action_design_matches_augmented_rows() {
        let d = ActionDesign::new(vec![0.1, 0.2, 0.3, 0.4], 2, 3).unwrap();
        assert_eq!(d.num_rows(), 6);
        assert_eq!(d.num_features(), 5);
        assert_eq!(d.value(4, 0), 0.3);
        assert_eq!(d.value(4, 3), 1.0);
        assert_eq!(d.value(4, 2), 0.0);
        assert_eq!(d.value(4, 4), 0.0);
    }
}
