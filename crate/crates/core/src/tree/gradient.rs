//! Regression trees fitted to per-row gradient and hessian statistics.
//!
//! A leaf holding gradient sum G and hessian sum H takes the value
//! -G / (H + lambda); splitting it into L and R scores
//! 1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)].

use super::cart::{midpoint, SortedRows};
use super::histogram::BinnedColumns;
use super::{FeatureColumns, LeafValue, Tree, TreeNode, TIE_EPS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradientTreeConfig {
    pub max_depth: Option<usize>,
    /// Leaf budget for leaf-wise growth; ignored by level-wise growth.
    pub num_leaves: usize,
    pub lambda: f64,
    pub min_leaf: usize,
    pub min_child_weight: f64,
}

impl GradientTreeConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and >= 0"));
        }
        if self.min_leaf == 0 {
            return Err(Error::invalid("min_leaf must be >= 1"));
        }
        if self.num_leaves < 2 {
            return Err(Error::invalid("num_leaves must be >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct GradSplit {
    feature: usize,
    threshold: f64,
    /// Bin index for histogram splits (rows with bin <= this go left).
    bin: u8,
    gain: f64,
}

#[inline]
fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

#[inline]
fn split_gain(gl: f64, hl: f64, g: f64, h: f64, lambda: f64) -> f64 {
    0.5 * (score(gl, hl, lambda) + score(g - gl, h - hl, lambda) - score(g, h, lambda))
}

#[inline]
fn leaf_value(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

fn sums(rows: &[u32], grad: &[f64], hess: &[f64]) -> (f64, f64) {
    rows.iter().fold((0.0, 0.0), |(g, h), &r| {
        (g + grad[r as usize], h + hess[r as usize])
    })
}

fn check_inputs(n: usize, grad: &[f64], hess: &[f64], rows: &[u32]) -> Result<()> {
    if grad.len() != n || hess.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: grad.len().min(hess.len()),
        });
    }
    if rows.is_empty() {
        return Err(Error::invalid("no rows to fit"));
    }
    if rows.iter().any(|&r| r as usize >= n) {
        return Err(Error::invalid("row index out of range"));
    }
    Ok(())
}

fn best_exact(
    x: &FeatureColumns,
    node: &SortedRows,
    grad: &[f64],
    hess: &[f64],
    (g, h): (f64, f64),
    cfg: &GradientTreeConfig,
) -> Option<GradSplit> {
    let count = node.len();
    if count < 2 * cfg.min_leaf {
        return None;
    }
    let mut best: Option<GradSplit> = None;
    for f in 0..x.d() {
        let col = x.col(f);
        let order = &node.by_feature[f];
        let (mut gl, mut hl) = (0.0, 0.0);
        for i in 0..count - 1 {
            let r = order[i] as usize;
            gl += grad[r];
            hl += hess[r];
            let left_count = i + 1;
            if left_count < cfg.min_leaf {
                continue;
            }
            if count - left_count < cfg.min_leaf {
                break;
            }
            let (v, next) = (col[r], col[order[i + 1] as usize]);
            if !(v < next) || hl < cfg.min_child_weight || h - hl < cfg.min_child_weight {
                continue;
            }
            let gain = split_gain(gl, hl, g, h, cfg.lambda);
            if gain > best.map_or(TIE_EPS, |b| b.gain + TIE_EPS) {
                best = Some(GradSplit {
                    feature: f,
                    threshold: midpoint(v, next),
                    bin: 0,
                    gain,
                });
            }
        }
    }
    best
}

/// Depth-bounded tree grown one level at a time over exact thresholds.
/// Leaf values are unshrunk Newton steps.
pub fn build_levelwise(
    x: &FeatureColumns,
    grad: &[f64],
    hess: &[f64],
    rows: &[u32],
    cfg: &GradientTreeConfig,
) -> Result<Tree> {
    cfg.validate()?;
    check_inputs(x.n(), grad, hess, rows)?;
    let mut goes_left = vec![false; x.n()];
    let mut nodes = vec![TreeNode::Leaf(LeafValue::Score(0.0))];
    let mut level = vec![(0usize, SortedRows::root(x, rows))];
    let mut depth = 0usize;
    while !level.is_empty() {
        let mut next_level = Vec::new();
        for (slot, node) in level {
            let (g, h) = sums(node.rows(), grad, hess);
            nodes[slot] = TreeNode::Leaf(LeafValue::Score(leaf_value(g, h, cfg.lambda)));
            if cfg.max_depth.is_some_and(|m| depth >= m) {
                continue;
            }
            let Some(split) = best_exact(x, &node, grad, hess, (g, h), cfg) else {
                continue;
            };
            let col = x.col(split.feature);
            for &r in node.rows() {
                goes_left[r as usize] = col[r as usize] <= split.threshold;
            }
            let (l, r) = node.partition(&goes_left);
            let li = nodes.len();
            nodes.push(TreeNode::Leaf(LeafValue::Score(0.0)));
            nodes.push(TreeNode::Leaf(LeafValue::Score(0.0)));
            nodes[slot] = TreeNode::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: li as u32,
                right: li as u32 + 1,
            };
            next_level.push((li, l));
            next_level.push((li + 1, r));
        }
        level = next_level;
        depth += 1;
    }
    Tree::from_nodes(nodes, x.d())
}

struct OpenLeaf {
    slot: usize,
    rows: Vec<u32>,
    depth: usize,
    g: f64,
    h: f64,
    best: Option<GradSplit>,
}

fn best_binned(
    binned: &BinnedColumns,
    rows: &[u32],
    grad: &[f64],
    hess: &[f64],
    (g, h): (f64, f64),
    cfg: &GradientTreeConfig,
) -> Option<GradSplit> {
    let count = rows.len();
    if count < 2 * cfg.min_leaf {
        return None;
    }
    let mut best: Option<GradSplit> = None;
    let mut hist: Vec<(f64, f64, usize)> = Vec::new();
    for f in 0..binned.bins.len() {
        let nb = binned.n_bins(f);
        hist.clear();
        hist.resize(nb, (0.0, 0.0, 0));
        let col = &binned.bins[f];
        for &r in rows {
            let e = &mut hist[col[r as usize] as usize];
            e.0 += grad[r as usize];
            e.1 += hess[r as usize];
            e.2 += 1;
        }
        let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
        for b in 0..nb - 1 {
            gl += hist[b].0;
            hl += hist[b].1;
            cl += hist[b].2;
            if hist[b].2 == 0 && b > 0 {
                // same partition as the previous boundary
                continue;
            }
            if cl < cfg.min_leaf || count - cl < cfg.min_leaf {
                continue;
            }
            if hl < cfg.min_child_weight || h - hl < cfg.min_child_weight {
                continue;
            }
            let gain = split_gain(gl, hl, g, h, cfg.lambda);
            if gain > best.map_or(TIE_EPS, |s| s.gain + TIE_EPS) {
                best = Some(GradSplit {
                    feature: f,
                    threshold: binned.edges[f][b],
                    bin: b as u8,
                    gain,
                });
            }
        }
    }
    best
}

/// Best-first growth on binned features: the open leaf with the largest
/// gain is split until `num_leaves` leaves exist or no split has positive
/// gain. Ties between leaves go to the one created first.
pub fn build_leafwise(
    binned: &BinnedColumns,
    grad: &[f64],
    hess: &[f64],
    rows: &[u32],
    cfg: &GradientTreeConfig,
) -> Result<Tree> {
    cfg.validate()?;
    let n = binned.bins.first().map_or(0, Vec::len);
    check_inputs(n, grad, hess, rows)?;
    let d = binned.bins.len();

    let open = |slot: usize, rows: Vec<u32>, depth: usize| {
        let (g, h) = sums(&rows, grad, hess);
        let best = if cfg.max_depth.is_some_and(|m| depth >= m) {
            None
        } else {
            best_binned(binned, &rows, grad, hess, (g, h), cfg)
        };
        OpenLeaf {
            slot,
            rows,
            depth,
            g,
            h,
            best,
        }
    };

    let mut nodes = vec![TreeNode::Leaf(LeafValue::Score(0.0))];
    let mut leaves = vec![open(0, rows.to_vec(), 0)];
    while leaves.len() < cfg.num_leaves {
        let mut pick: Option<(usize, f64)> = None;
        for (i, leaf) in leaves.iter().enumerate() {
            if let Some(s) = leaf.best {
                if pick.map_or(true, |(_, g)| s.gain > g + TIE_EPS) {
                    pick = Some((i, s.gain));
                }
            }
        }
        let Some((i, _)) = pick else { break };
        let leaf = leaves.remove(i);
        let split = leaf.best.expect("picked leaves have a split");
        let col = &binned.bins[split.feature];
        let (l, r): (Vec<u32>, Vec<u32>) = leaf
            .rows
            .iter()
            .partition(|&&row| col[row as usize] <= split.bin);
        let li = nodes.len();
        nodes.push(TreeNode::Leaf(LeafValue::Score(0.0)));
        nodes.push(TreeNode::Leaf(LeafValue::Score(0.0)));
        nodes[leaf.slot] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: li as u32,
            right: li as u32 + 1,
        };
        // keep creation order so leaf ties resolve deterministically
        leaves.insert(i, open(li + 1, r, leaf.depth + 1));
        leaves.insert(i, open(li, l, leaf.depth + 1));
    }
    for leaf in &leaves {
        nodes[leaf.slot] = TreeNode::Leaf(LeafValue::Score(leaf_value(leaf.g, leaf.h, cfg.lambda)));
    }
    Tree::from_nodes(nodes, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::histogram_bin;

    fn cfg() -> GradientTreeConfig {
        GradientTreeConfig {
            max_depth: Some(3),
            num_leaves: 8,
            lambda: 1.0,
            min_leaf: 1,
            min_child_weight: 0.0,
        }
    }

    #[test]
    fn stump_leaf_values_are_newton_steps() {
        let x = FeatureColumns::from_columns(vec![vec![0.0, 1.0, 2.0, 3.0]]).unwrap();
        let grad = [-0.5, -0.5, 0.5, 0.5];
        let hess = [0.25; 4];
        let c = GradientTreeConfig {
            max_depth: Some(1),
            ..cfg()
        };
        let t = build_levelwise(&x, &grad, &hess, &[0, 1, 2, 3], &c).unwrap();
        // G_L = -1, H_L = 0.5 -> 1 / 1.5
        assert!((t.predict_score(&[0.0]).unwrap() - 1.0 / 1.5).abs() < 1e-15);
        assert!((t.predict_score(&[3.0]).unwrap() + 1.0 / 1.5).abs() < 1e-15);
        match t.nodes()[0] {
            TreeNode::Split { threshold, .. } => assert_eq!(threshold, 1.5),
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn gain_formula() {
        // G_L=-1,H_L=.5 ; G_R=1,H_R=.5 ; G=0,H=1 ; lambda=1
        let g = split_gain(-1.0, 0.5, 0.0, 1.0, 1.0);
        assert!((g - 0.5 * (1.0 / 1.5 + 1.0 / 1.5)).abs() < 1e-15);
    }

    #[test]
    fn no_gain_gives_single_leaf() {
        let x = FeatureColumns::from_columns(vec![vec![0.0, 1.0, 2.0]]).unwrap();
        let t = build_levelwise(&x, &[0.0; 3], &[1.0; 3], &[0, 1, 2], &cfg()).unwrap();
        assert_eq!(t.nodes().len(), 1);
    }

    #[test]
    fn leafwise_respects_leaf_budget() {
        let n = 64;
        let x = FeatureColumns::from_columns(vec![(0..n).map(|i| i as f64).collect()]).unwrap();
        let grad: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let hess = vec![1.0; n];
        let rows: Vec<u32> = (0..n as u32).collect();
        let b = histogram_bin(&x, 255).unwrap();
        for leaves in [2, 3, 5, 8] {
            let c = GradientTreeConfig {
                num_leaves: leaves,
                max_depth: None,
                ..cfg()
            };
            let t = build_leafwise(&b, &grad, &hess, &rows, &c).unwrap();
            assert!(t.leaf_count() <= leaves);
            assert!(t.leaf_count() >= 2);
        }
    }

    #[test]
    fn leafwise_matches_levelwise_on_a_stump() {
        let x = FeatureColumns::from_columns(vec![
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            vec![5.0, 3.0, 1.0, 4.0, 0.0, 2.0],
        ])
        .unwrap();
        let grad = [-1.0, -0.8, -0.2, 0.3, 0.9, 1.0];
        let hess = [0.3; 6];
        let rows = [0, 1, 2, 3, 4, 5];
        let level = build_levelwise(
            &x,
            &grad,
            &hess,
            &rows,
            &GradientTreeConfig {
                max_depth: Some(1),
                ..cfg()
            },
        )
        .unwrap();
        let b = histogram_bin(&x, 255).unwrap();
        let leaf = build_leafwise(
            &b,
            &grad,
            &hess,
            &rows,
            &GradientTreeConfig {
                num_leaves: 2,
                max_depth: None,
                ..cfg()
            },
        )
        .unwrap();
        assert_eq!(level, leaf);
    }
}
