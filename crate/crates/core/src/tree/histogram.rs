use super::{check_xy, gini_decrease, FeatureColumns, SplitCandidate, TreeConfig, TIE_EPS};
use crate::data::Label;
use crate::error::{Error, Result};

/// Quantile-binned features. Bin `b` of feature `f` holds the values in
/// `(edges[f][b-1], edges[f][b]]`; the last bin is unbounded above.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedColumns {
    pub bins: Vec<Vec<u8>>,
    pub edges: Vec<Vec<f64>>,
}

impl BinnedColumns {
    pub fn n_bins(&self, f: usize) -> usize {
        self.edges[f].len() + 1
    }

    pub fn bin_of(&self, f: usize, v: f64) -> u8 {
        self.edges[f].partition_point(|e| *e < v) as u8
    }
}

/// Equal-frequency edges: one cut at every `n/n_bins` rank, moved up to
/// the next change of value inside runs of duplicates, placed at the
/// midpoint between neighbouring distinct values.
fn quantile_edges(col: &[f64], n_bins: usize) -> Vec<f64> {
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges: Vec<f64> = Vec::new();
    for b in 1..n_bins {
        let mut i = b * n / n_bins;
        if i == 0 {
            continue;
        }
        while i < n && !(sorted[i - 1] < sorted[i]) {
            i += 1;
        }
        if i >= n {
            break;
        }
        let e = super::cart::midpoint(sorted[i - 1], sorted[i]);
        if edges.last().map_or(true, |&last| e > last) {
            edges.push(e);
        }
    }
    edges
}

pub fn histogram_bin(x: &FeatureColumns, n_bins: usize) -> Result<BinnedColumns> {
    if !(2..=255).contains(&n_bins) {
        return Err(Error::invalid(format!("n_bins must be in [2, 255], got {n_bins}")));
    }
    let edges: Vec<Vec<f64>> = (0..x.d()).map(|f| quantile_edges(x.col(f), n_bins)).collect();
    let bins = (0..x.d())
        .map(|f| {
            x.col(f)
                .iter()
                .map(|&v| edges[f].partition_point(|e| *e < v) as u8)
                .collect()
        })
        .collect();
    Ok(BinnedColumns { bins, edges })
}

/// Best gini split restricted to bin boundaries.
pub fn best_split_binned(
    x: &FeatureColumns,
    binned: &BinnedColumns,
    y: &[Label],
    weights: &[f64],
    cfg: &TreeConfig,
) -> Result<Option<SplitCandidate>> {
    check_xy(x, y, weights)?;
    cfg.validate()?;
    let rows: Vec<usize> = (0..x.n()).filter(|&r| weights[r] > 0.0).collect();
    let count = rows.len();
    if count < 2 * cfg.min_leaf {
        return Ok(None);
    }
    let mut parent = [0.0; 2];
    for &r in &rows {
        parent[y[r].index()] += weights[r];
    }
    let mut best: Option<SplitCandidate> = None;
    for f in 0..x.d() {
        let nb = binned.n_bins(f);
        let mut hist = vec![([0.0f64; 2], 0usize); nb];
        for &r in &rows {
            let h = &mut hist[binned.bins[f][r] as usize];
            h.0[y[r].index()] += weights[r];
            h.1 += 1;
        }
        let (mut left, mut left_count) = ([0.0; 2], 0usize);
        for b in 0..nb - 1 {
            left[0] += hist[b].0[0];
            left[1] += hist[b].0[1];
            left_count += hist[b].1;
            let right_count = count - left_count;
            if left_count < cfg.min_leaf || right_count < cfg.min_leaf {
                continue;
            }
            let right = [parent[0] - left[0], parent[1] - left[1]];
            let decrease = gini_decrease(parent, left, right);
            if decrease > best.as_ref().map_or(TIE_EPS, |s| s.impurity_decrease + TIE_EPS) {
                best = Some(SplitCandidate {
                    feature_index: f,
                    threshold: binned.edges[f][b],
                    impurity_decrease: decrease,
                    left_count,
                    right_count,
                });
            }
        }
    }
    Ok(best)
}
