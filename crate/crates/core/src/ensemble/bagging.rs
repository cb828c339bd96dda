use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ClassifierKind, EnsembleConfig, Member, TrainedModel};
use crate::data::Label;
use crate::error::Result;
use crate::tree::{build_cart, FeatureColumns, FeatureSubsample, LeafValue, TreeConfig};

fn tree_config(cfg: &EnsembleConfig, feature_subsample: FeatureSubsample, seed: u64) -> TreeConfig {
    TreeConfig {
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf,
        feature_subsample,
        rng_seed: seed,
        ..TreeConfig::default()
    }
}

pub(super) fn fit_single(x: &FeatureColumns, y: &[Label], cfg: &EnsembleConfig) -> Result<TrainedModel> {
    let tree = build_cart(
        x,
        y,
        &vec![1.0; x.n()],
        &tree_config(cfg, cfg.feature_subsample, cfg.rng_seed),
    )?;
    Ok(TrainedModel::new(
        ClassifierKind::DecisionTree,
        x.d(),
        cfg.clone(),
        vec![Member { tree, weight: 1.0 }],
    ))
}

/// Per-row multiplicities of one member's resample.
fn draw_rows(rng: &mut ChaCha8Rng, n: usize, cfg: &EnsembleConfig) -> Vec<f64> {
    let m = ((cfg.subsample_ratio * n as f64).round() as usize).clamp(1, n);
    let mut w = vec![0.0; n];
    if cfg.bootstrap {
        for _ in 0..m {
            w[rng.gen_range(0..n)] += 1.0;
        }
    } else {
        for i in sample(rng, n, m) {
            w[i] = 1.0;
        }
    }
    w
}

/// Bagging and random forest share this path; the forest differs only in
/// its per-split feature subsample. All randomness is drawn up front from
/// one seeded stream, so member order and content do not depend on how the
/// trees are scheduled.
pub(super) fn fit(
    kind: ClassifierKind,
    x: &FeatureColumns,
    y: &[Label],
    cfg: &EnsembleConfig,
) -> Result<TrainedModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let plans: Vec<(Vec<f64>, u64)> = (0..cfg.n_estimators)
        .map(|_| {
            let w = draw_rows(&mut rng, x.n(), cfg);
            (w, rng.gen::<u64>())
        })
        .collect();
    let subsample = match kind {
        ClassifierKind::Bagging => FeatureSubsample::All,
        _ => cfg.feature_subsample,
    };
    let members = plans
        .into_par_iter()
        .map(|(w, seed)| {
            // a resample may miss a class; the tree then is a pure leaf
            let tree = build_cart(x, y, &w, &tree_config(cfg, subsample, seed))?;
            Ok(Member { tree, weight: 1.0 })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainedModel::new(kind, x.d(), cfg.clone(), members))
}

pub(super) fn average_proba(members: &[Member], x: &[f64]) -> [f64; 2] {
    let mut acc = [0.0; 2];
    for m in members {
        if let LeafValue::Class(p) = m.tree.leaf_unchecked(x) {
            acc[0] += p[0];
            acc[1] += p[1];
        }
    }
    let k = members.len() as f64;
    let p1 = acc[1] / k;
    [1.0 - p1, p1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::train;
    use crate::synthetic::reference_dataset;

    #[test]
    fn unbootstrapped_single_member_equals_decision_tree() {
        let ds = reference_dataset(3);
        let dt = train(
            ClassifierKind::DecisionTree,
            &ds,
            &EnsembleConfig::for_kind(ClassifierKind::DecisionTree),
        )
        .unwrap();
        let cfg = EnsembleConfig {
            n_estimators: 1,
            bootstrap: false,
            subsample_ratio: 1.0,
            ..EnsembleConfig::for_kind(ClassifierKind::Bagging)
        };
        let bag = train(ClassifierKind::Bagging, &ds, &cfg).unwrap();
        assert_eq!(bag.members[0].tree, dt.members[0].tree);
        for i in 0..ds.n {
            let x: Vec<f64> = ds.row(i).iter().map(|&v| v as f64 + 0.01).collect();
            assert_eq!(bag.predict(&x).unwrap(), dt.predict(&x).unwrap());
        }
    }

    #[test]
    fn forest_with_all_features_equals_bagging() {
        let ds = reference_dataset(11);
        let cfg = EnsembleConfig {
            n_estimators: 12,
            rng_seed: 5,
            ..EnsembleConfig::for_kind(ClassifierKind::Bagging)
        };
        let bag = train(ClassifierKind::Bagging, &ds, &cfg).unwrap();
        let rf_cfg = EnsembleConfig {
            feature_subsample: FeatureSubsample::Count(ds.d),
            ..cfg.clone()
        };
        let rf = train(ClassifierKind::RandomForest, &ds, &rf_cfg).unwrap();
        assert_eq!(bag.members, rf.members);
    }

    #[test]
    fn unanimous_forest_gives_certainty() {
        use crate::tree::{Tree, TreeNode};
        let leaf = |p1: f64| TreeNode::Leaf(LeafValue::Class([1.0 - p1, p1]));
        let tree = |p1: f64| {
            let nodes = vec![
                TreeNode::Split { feature: 0, threshold: 0.0, left: 1, right: 2 },
                leaf(p1),
                leaf(1.0),
            ];
            Member { tree: Tree::from_nodes(nodes, 2).unwrap(), weight: 1.0 }
        };
        let cfg = EnsembleConfig::for_kind(ClassifierKind::RandomForest);
        let members = vec![tree(0.3), tree(1.0), tree(0.0)];
        let rf = TrainedModel::new(ClassifierKind::RandomForest, 2, cfg, members);
        assert_eq!(rf.predict_proba(&[5.0, 0.0]).unwrap(), [0.0, 1.0]);
        let split = rf.predict_proba(&[-5.0, 0.0]).unwrap();
        assert!((split[1] - 1.3 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn resample_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = EnsembleConfig {
            subsample_ratio: 0.5,
            bootstrap: false,
            ..EnsembleConfig::for_kind(ClassifierKind::Bagging)
        };
        let w = draw_rows(&mut rng, 10, &cfg);
        assert_eq!(w.iter().sum::<f64>(), 5.0);
        assert!(w.iter().all(|&v| v == 0.0 || v == 1.0));
        let boot = EnsembleConfig::for_kind(ClassifierKind::Bagging);
        assert_eq!(draw_rows(&mut rng, 10, &boot).iter().sum::<f64>(), 10.0);
    }
}
