//! Second-order gradient boosting on binary log-loss.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ClassifierKind, EnsembleConfig, Member, TrainedModel};
use crate::data::Label;
use crate::error::Result;
use crate::tree::{
    build_leafwise, build_levelwise, histogram_bin, FeatureColumns, GradientTreeConfig, LeafValue,
};

const MIN_HESSIAN: f64 = 1e-16;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z), without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean binary log-loss of raw scores (logits) against labels.
pub fn log_loss(scores: &[f64], y: &[Label]) -> f64 {
    let sum: f64 = scores
        .iter()
        .zip(y)
        .map(|(&s, &l)| softplus(s) - if l == Label::Positive { s } else { 0.0 })
        .sum();
    sum / scores.len() as f64
}

pub(super) fn raw_score(base: f64, members: &[Member], x: &[f64]) -> f64 {
    members.iter().fold(base, |acc, m| match m.tree.leaf_unchecked(x) {
        LeafValue::Score(s) => acc + m.weight * s,
        LeafValue::Class(_) => acc,
    })
}

pub(super) fn fit(
    kind: ClassifierKind,
    x: &FeatureColumns,
    y: &[Label],
    cfg: &EnsembleConfig,
) -> Result<TrainedModel> {
    let n = x.n();
    let positives = y.iter().filter(|&&l| l == Label::Positive).count() as f64;
    let rate = positives / n as f64;
    let base = (rate / (1.0 - rate)).ln();
    let target: Vec<f64> = y.iter().map(|&l| l.index() as f64).collect();

    let tree_cfg = GradientTreeConfig {
        max_depth: cfg.max_depth,
        num_leaves: cfg.num_leaves,
        lambda: cfg.l2_leaf_penalty,
        min_leaf: cfg.min_leaf,
        min_child_weight: cfg.min_child_weight,
    };
    let binned = match kind {
        ClassifierKind::GbdtLeafwise => Some(histogram_bin(x, cfg.n_bins)?),
        _ => None,
    };
    let rows_f64: Vec<Vec<f64>> = (0..n).map(|i| x.row(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let per_round = ((cfg.subsample_ratio * n as f64).round() as usize).clamp(1, n);

    let mut scores = vec![base; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut members = Vec::with_capacity(cfg.n_estimators);
    let mut loss_curve = vec![log_loss(&scores, y)];

    for _ in 0..cfg.n_estimators {
        for i in 0..n {
            let p = sigmoid(scores[i]);
            grad[i] = p - target[i];
            hess[i] = (p * (1.0 - p)).max(MIN_HESSIAN);
        }
        let rows: Vec<u32> = if per_round < n {
            let mut r: Vec<u32> = sample(&mut rng, n, per_round).into_iter().map(|i| i as u32).collect();
            r.sort_unstable();
            r
        } else {
            (0..n as u32).collect()
        };
        let mut tree = match &binned {
            Some(b) => build_leafwise(b, &grad, &hess, &rows, &tree_cfg)?,
            None => build_levelwise(x, &grad, &hess, &rows, &tree_cfg)?,
        };
        tree.scale_scores(cfg.learning_rate);
        for (s, row) in scores.iter_mut().zip(&rows_f64) {
            if let LeafValue::Score(v) = tree.leaf_unchecked(row) {
                *s += v;
            }
        }
        loss_curve.push(log_loss(&scores, y));
        members.push(Member { tree, weight: 1.0 });
    }

    let mut model = TrainedModel::new(kind, x.d(), cfg.clone(), members);
    model.base_score = base;
    model.loss_curve = loss_curve;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureMatrix;
    use crate::ensemble::train;
    use crate::synthetic::reference_dataset;

    #[test]
    fn sigmoid_and_loss_basics() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        let l = log_loss(&[0.0, 0.0], &[Label::Positive, Label::Negative]);
        assert!((l - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn balanced_labels_start_at_zero() {
        let n = 274;
        let m = FeatureMatrix::new(
            1,
            (0..n).map(|i| i as f32).collect(),
            (0..n).map(|i| if i < 137 { Label::Positive } else { Label::Negative }).collect(),
            (0..n).map(|i| i.to_string()).collect(),
            "x",
        )
        .unwrap();
        for kind in [ClassifierKind::GbdtLevelwise, ClassifierKind::GbdtLeafwise] {
            let cfg = EnsembleConfig {
                n_estimators: 0,
                ..EnsembleConfig::for_kind(kind)
            };
            let model = train(kind, &m, &cfg).unwrap();
            assert_eq!(model.base_score, 0.0);
            assert_eq!(model.predict_proba(&[12.0]).unwrap(), [0.5, 0.5]);
            assert_eq!(model.predict_proba(&[-1e9]).unwrap(), [0.5, 0.5]);
        }
    }

    #[test]
    fn imbalanced_base_score_is_log_odds() {
        let m = FeatureMatrix::new(
            1,
            vec![0.0, 1.0, 2.0, 3.0],
            vec![Label::Positive, Label::Negative, Label::Negative, Label::Negative],
            (0..4).map(|i| i.to_string()).collect(),
            "x",
        )
        .unwrap();
        let cfg = EnsembleConfig {
            n_estimators: 0,
            ..EnsembleConfig::for_kind(ClassifierKind::GbdtLevelwise)
        };
        let model = train(ClassifierKind::GbdtLevelwise, &m, &cfg).unwrap();
        assert!((model.base_score - (1.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((model.predict_proba(&[0.0]).unwrap()[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn loss_curve_is_non_increasing() {
        let ds = reference_dataset(42);
        for kind in [ClassifierKind::GbdtLevelwise, ClassifierKind::GbdtLeafwise] {
            let cfg = EnsembleConfig {
                n_estimators: 50,
                ..EnsembleConfig::for_kind(kind)
            };
            let model = train(kind, &ds, &cfg).unwrap();
            assert_eq!(model.loss_curve.len(), 51);
            for w in model.loss_curve.windows(2) {
                assert!(w[1] <= w[0], "{kind}: {w:?}");
            }
        }
    }

    #[test]
    fn leafwise_trees_respect_leaf_budget() {
        let ds = reference_dataset(42);
        let cfg = EnsembleConfig {
            n_estimators: 5,
            num_leaves: 4,
            min_leaf: 1,
            ..EnsembleConfig::for_kind(ClassifierKind::GbdtLeafwise)
        };
        let model = train(ClassifierKind::GbdtLeafwise, &ds, &cfg).unwrap();
        assert!(model.members.iter().all(|m| m.tree.leaf_count() <= 4));
    }
}
