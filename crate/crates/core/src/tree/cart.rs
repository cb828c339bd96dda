use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    check_xy, gini_decrease, FeatureColumns, LeafValue, SplitCandidate, Tree, TreeConfig,
    TreeNode, TIE_EPS,
};
use crate::data::Label;
use crate::error::Result;

/// Rows of one node, sorted by value once per feature. Splitting a node
/// partitions every list stably, so children stay sorted.
pub(crate) struct SortedRows {
    pub(crate) by_feature: Vec<Vec<u32>>,
}

impl SortedRows {
    pub(crate) fn root(x: &FeatureColumns, rows: &[u32]) -> Self {
        let by_feature = (0..x.d())
            .map(|f| {
                let col = x.col(f);
                let mut order = rows.to_vec();
                order.sort_by(|&a, &b| {
                    col[a as usize]
                        .total_cmp(&col[b as usize])
                        .then(a.cmp(&b))
                });
                order
            })
            .collect();
        SortedRows { by_feature }
    }

    pub(crate) fn rows(&self) -> &[u32] {
        &self.by_feature[0]
    }

    pub(crate) fn len(&self) -> usize {
        self.by_feature[0].len()
    }

    /// `goes_left` is indexed by row id.
    pub(crate) fn partition(self, goes_left: &[bool]) -> (SortedRows, SortedRows) {
        let mut left = Vec::with_capacity(self.by_feature.len());
        let mut right = Vec::with_capacity(self.by_feature.len());
        for order in self.by_feature {
            let (l, r): (Vec<u32>, Vec<u32>) =
                order.into_iter().partition(|&r| goes_left[r as usize]);
            left.push(l);
            right.push(r);
        }
        (SortedRows { by_feature: left }, SortedRows { by_feature: right })
    }
}

/// Midpoint threshold that keeps `lo` on the left and `hi` on the right.
#[inline]
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m < hi {
        m
    } else {
        lo
    }
}

fn class_weights(rows: &[u32], y: &[Label], w: &[f64]) -> [f64; 2] {
    let mut c = [0.0; 2];
    for &r in rows {
        c[y[r as usize].index()] += w[r as usize];
    }
    c
}

/// Best gini split of the rows in `node` over `features` (ascending).
fn best_split_sorted(
    x: &FeatureColumns,
    y: &[Label],
    w: &[f64],
    node: &SortedRows,
    features: &[usize],
    min_leaf: usize,
) -> Option<SplitCandidate> {
    let count = node.len();
    if count < 2 * min_leaf {
        return None;
    }
    let parent = class_weights(node.rows(), y, w);
    let mut best: Option<SplitCandidate> = None;
    for &f in features {
        let col = x.col(f);
        let order = &node.by_feature[f];
        let mut left = [0.0; 2];
        for i in 0..count - 1 {
            let r = order[i] as usize;
            left[y[r].index()] += w[r];
            let left_count = i + 1;
            let right_count = count - left_count;
            if left_count < min_leaf {
                continue;
            }
            if right_count < min_leaf {
                break;
            }
            let (v, next) = (col[r], col[order[i + 1] as usize]);
            if !(v < next) {
                continue;
            }
            let right = [parent[0] - left[0], parent[1] - left[1]];
            let decrease = gini_decrease(parent, left, right);
            if decrease > best.as_ref().map_or(TIE_EPS, |b| b.impurity_decrease + TIE_EPS) {
                best = Some(SplitCandidate {
                    feature_index: f,
                    threshold: midpoint(v, next),
                    impurity_decrease: decrease,
                    left_count,
                    right_count,
                });
            }
        }
    }
    best
}

/// Exhaustive search over every feature and every midpoint between
/// consecutive distinct values. Ties go to the lowest feature index, then
/// the lowest threshold. Returns `None` when no split lowers impurity.
pub fn best_split_exhaustive(
    x: &FeatureColumns,
    y: &[Label],
    weights: &[f64],
    cfg: &TreeConfig,
) -> Result<Option<SplitCandidate>> {
    check_xy(x, y, weights)?;
    cfg.validate()?;
    let rows: Vec<u32> = (0..x.n() as u32).filter(|&r| weights[r as usize] > 0.0).collect();
    let node = SortedRows::root(x, &rows);
    let features: Vec<usize> = (0..x.d()).collect();
    Ok(best_split_sorted(x, y, weights, &node, &features, cfg.min_leaf))
}

/// Grows a CART classification tree. Rows with zero weight are ignored;
/// leaves hold the weighted class distribution of their rows.
pub fn build_cart(
    x: &FeatureColumns,
    y: &[Label],
    weights: &[f64],
    cfg: &TreeConfig,
) -> Result<Tree> {
    check_xy(x, y, weights)?;
    cfg.validate()?;
    let d = x.d();
    let n_sub = cfg.feature_subsample.resolve(d);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut goes_left = vec![false; x.n()];

    let rows: Vec<u32> = (0..x.n() as u32).filter(|&r| weights[r as usize] > 0.0).collect();
    let all_features: Vec<usize> = (0..d).collect();
    let mut nodes: Vec<TreeNode> = Vec::new();
    // (arena slot, rows, depth); slot reserved before children are pushed.
    let mut stack = vec![(0usize, SortedRows::root(x, &rows), 0usize)];
    nodes.push(TreeNode::Leaf(LeafValue::Class([0.5, 0.5])));

    while let Some((slot, node, depth)) = stack.pop() {
        let dist = class_weights(node.rows(), y, weights);
        let total = dist[0] + dist[1];
        let leaf = TreeNode::Leaf(LeafValue::Class([dist[0] / total, dist[1] / total]));
        let pure = dist[0] == 0.0 || dist[1] == 0.0;
        if pure || cfg.max_depth.is_some_and(|m| depth >= m) {
            nodes[slot] = leaf;
            continue;
        }
        let sampled;
        let features: &[usize] = if n_sub < d {
            let mut v = sample(&mut rng, d, n_sub).into_vec();
            v.sort_unstable();
            sampled = v;
            &sampled
        } else {
            &all_features
        };
        let Some(split) = best_split_sorted(x, y, weights, &node, features, cfg.min_leaf) else {
            nodes[slot] = leaf;
            continue;
        };
        let col = x.col(split.feature_index);
        for &r in node.rows() {
            goes_left[r as usize] = col[r as usize] <= split.threshold;
        }
        let (l, r) = node.partition(&goes_left);
        let (li, ri) = (nodes.len(), nodes.len() + 1);
        nodes.push(TreeNode::Leaf(LeafValue::Class([0.5, 0.5])));
        nodes.push(TreeNode::Leaf(LeafValue::Class([0.5, 0.5])));
        nodes[slot] = TreeNode::Split {
            feature: split.feature_index,
            threshold: split.threshold,
            left: li as u32,
            right: ri as u32,
        };
        // right pushed first so the left subtree is expanded first
        stack.push((ri, r, depth + 1));
        stack.push((li, l, depth + 1));
    }
    Tree::from_nodes(nodes, d)
}
