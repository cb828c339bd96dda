//! Decision-tree machinery shared by every classifier: impurity, exact and
//! histogram split search, CART growth, second-order regression trees for
//! boosting, and prediction.

mod cart;
mod gradient;
mod histogram;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, Label};
use crate::error::{Error, Result};

pub use cart::{best_split_exhaustive, build_cart};
pub use gradient::{build_leafwise, build_levelwise, GradientTreeConfig};
pub use histogram::{best_split_binned, histogram_bin, BinnedColumns};

/// Candidates whose scores differ by no more than this are ties.
pub const TIE_EPS: f64 = 1e-12;

/// Column-major copy of a feature matrix in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureColumns {
    n: usize,
    cols: Vec<Vec<f64>>,
}

impl FeatureColumns {
    pub fn from_matrix(m: &FeatureMatrix) -> Self {
        let cols = (0..m.d)
            .map(|j| (0..m.n).map(|i| m.values[i * m.d + j] as f64).collect())
            .collect();
        FeatureColumns { n: m.n, cols }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: r.len(),
            });
        }
        let cols = (0..d).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Ok(FeatureColumns { n: rows.len(), cols })
    }

    pub fn from_columns(cols: Vec<Vec<f64>>) -> Result<Self> {
        let n = cols.first().map_or(0, Vec::len);
        if let Some(c) = cols.iter().find(|c| c.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: c.len(),
            });
        }
        Ok(FeatureColumns { n, cols })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.cols.len()
    }

    pub fn col(&self, f: usize) -> &[f64] {
        &self.cols[f]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.cols.iter().map(|c| c[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubsample {
    All,
    /// ceil(sqrt(d)) features per split.
    Sqrt,
    Count(usize),
}

impl FeatureSubsample {
    pub fn resolve(self, d: usize) -> usize {
        match self {
            FeatureSubsample::All => d,
            FeatureSubsample::Sqrt => ((d as f64).sqrt().ceil() as usize).clamp(1, d.max(1)),
            FeatureSubsample::Count(k) => k.clamp(1, d.max(1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Gini,
    SecondOrderGain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// `None` grows until purity or `min_leaf`.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub feature_subsample: FeatureSubsample,
    pub criterion: Criterion,
    pub rng_seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: None,
            min_leaf: 1,
            feature_subsample: FeatureSubsample::All,
            criterion: Criterion::Gini,
            rng_seed: 0,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_leaf == 0 {
            return Err(Error::invalid("min_leaf must be >= 1"));
        }
        if self.criterion != Criterion::Gini {
            return Err(Error::invalid(
                "classification trees use the gini criterion; second-order trees are grown by the boosting builders",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub feature_index: usize,
    pub threshold: f64,
    pub impurity_decrease: f64,
    pub left_count: usize,
    pub right_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LeafValue {
    /// Class distribution `[P(negative), P(positive)]`.
    Class([f64; 2]),
    /// Additive raw score of a boosting tree.
    Score(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf(LeafValue),
}

/// Binary tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    n_features: usize,
}

impl Tree {
    pub(crate) fn from_nodes(nodes: Vec<TreeNode>, n_features: usize) -> Result<Tree> {
        let t = Tree { nodes, n_features };
        t.check()?;
        Ok(t)
    }

    /// Every child index is in range and points forward, so the arena is a
    /// finite tree.
    fn check(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("tree has no nodes"));
        }
        let mut parents = vec![0u32; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if let TreeNode::Split {
                feature,
                left,
                right,
                threshold,
            } = *node
            {
                if feature >= self.n_features || !threshold.is_finite() {
                    return Err(Error::invalid(format!("node {i}: bad split")));
                }
                for child in [left, right] {
                    let c = child as usize;
                    if c <= i || c >= self.nodes.len() {
                        return Err(Error::invalid(format!("node {i}: bad child {c}")));
                    }
                    parents[c] += 1;
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err(Error::invalid("node arena is not a tree"));
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf(_)))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf(_) => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + go(nodes, left as usize).max(go(nodes, right as usize))
                }
            }
        }
        go(&self.nodes, 0)
    }

    /// Routes `x` to its leaf. Caller guarantees `x.len() == n_features`.
    #[inline]
    pub(crate) fn leaf_unchecked(&self, x: &[f64]) -> &LeafValue {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf(v) => return v,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn leaf(&self, x: &[f64]) -> Result<&LeafValue> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        Ok(self.leaf_unchecked(x))
    }

    /// Class distribution at the leaf reached by `x`.
    pub fn predict_proba(&self, x: &[f64]) -> Result<[f64; 2]> {
        match self.leaf(x)? {
            LeafValue::Class(p) => Ok(*p),
            LeafValue::Score(_) => Err(Error::invalid("regression tree has no class distribution")),
        }
    }

    pub fn predict_score(&self, x: &[f64]) -> Result<f64> {
        match self.leaf(x)? {
            LeafValue::Score(s) => Ok(*s),
            LeafValue::Class(_) => Err(Error::invalid("classification tree has no raw score")),
        }
    }

    pub(crate) fn scale_scores(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let TreeNode::Leaf(LeafValue::Score(s)) = n {
                *s *= factor;
            }
        }
    }
}

/// `predict_proba` under its specification name.
pub fn tree_predict_proba(root: &Tree, x: &[f64]) -> Result<[f64; 2]> {
    root.predict_proba(x)
}

/// Gini impurity 1 - sum p_k^2 of (possibly weighted) class counts.
pub fn gini(counts: &[f64]) -> Result<f64> {
    let total: f64 = counts.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("gini of an empty node"));
    }
    Ok(1.0 - counts.iter().map(|c| (c / total) * (c / total)).sum::<f64>())
}

#[inline]
pub(crate) fn gini2(c: [f64; 2]) -> f64 {
    let t = c[0] + c[1];
    let (p0, p1) = (c[0] / t, c[1] / t);
    1.0 - (p0 * p0 + p1 * p1)
}

/// Parent impurity minus the weight-averaged child impurities.
#[inline]
pub(crate) fn gini_decrease(parent: [f64; 2], left: [f64; 2], right: [f64; 2]) -> f64 {
    let w = parent[0] + parent[1];
    let wl = left[0] + left[1];
    let wr = right[0] + right[1];
    gini2(parent) - (wl / w) * gini2(left) - (wr / w) * gini2(right)
}

pub(crate) fn check_xy(x: &FeatureColumns, y: &[Label], w: &[f64]) -> Result<()> {
    if y.len() != x.n() {
        return Err(Error::DimensionMismatch {
            expected: x.n(),
            found: y.len(),
        });
    }
    if w.len() != x.n() {
        return Err(Error::DimensionMismatch {
            expected: x.n(),
            found: w.len(),
        });
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    if !(w.iter().sum::<f64>() > 0.0) {
        return Err(Error::invalid("weights are all zero"));
    }
    if x.d() == 0 {
        return Err(Error::invalid("no feature columns"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[4.0, 0.0]).unwrap(), 0.0);
        assert_eq!(gini(&[2.0, 2.0]).unwrap(), 0.5);
        assert_eq!(gini(&[3.0, 1.0]).unwrap(), 0.375);
        assert!(gini(&[0.0, 0.0]).is_err());
        assert!(gini(&[]).is_err());
    }

    #[test]
    fn sqrt_subsample_rounds_up() {
        assert_eq!(FeatureSubsample::Sqrt.resolve(16), 4);
        assert_eq!(FeatureSubsample::Sqrt.resolve(17), 5);
        assert_eq!(FeatureSubsample::Sqrt.resolve(1024), 32);
        assert_eq!(FeatureSubsample::Count(99).resolve(5), 5);
        assert_eq!(FeatureSubsample::All.resolve(7), 7);
    }

    #[test]
    fn malformed_arena_is_rejected() {
        let leaf = TreeNode::Leaf(LeafValue::Score(0.0));
        let cyc = TreeNode::Split {
            feature: 0,
            threshold: 0.0,
            left: 0,
            right: 1,
        };
        assert!(Tree::from_nodes(vec![cyc, leaf], 1).is_err());
        let shared = TreeNode::Split {
            feature: 0,
            threshold: 0.0,
            left: 1,
            right: 1,
        };
        assert!(Tree::from_nodes(vec![shared, leaf], 1).is_err());
        assert!(Tree::from_nodes(vec![], 1).is_err());
        assert!(Tree::from_nodes(vec![leaf], 1).is_ok());
    }

    #[test]
    fn predict_checks_width() {
        let t = Tree::from_nodes(vec![TreeNode::Leaf(LeafValue::Class([0.5, 0.5]))], 3).unwrap();
        assert!(t.predict_proba(&[0.0, 0.0]).is_err());
        assert_eq!(t.predict_proba(&[0.0; 3]).unwrap(), [0.5, 0.5]);
    }
}
