//! Two-class SAMME with depth-1 stumps.

use super::{argmax, ClassifierKind, EnsembleConfig, Member, TrainedModel};
use crate::data::Label;
use crate::error::{Error, Result};
use crate::tree::{build_cart, FeatureColumns, LeafValue, TreeConfig};

const N_CLASSES: f64 = 2.0;

/// Outcome of one boosting round given the current sample weights and the
/// weak learner's mistakes.
#[derive(Debug, Clone, PartialEq)]
pub enum SammeRound {
    /// Weak learner made no weighted error; boosting stops and it is kept
    /// with unit weight.
    Perfect,
    /// epsilon >= 1 - 1/K: no better than chance, the learner is dropped.
    Rejected { epsilon: f64 },
    Accepted {
        epsilon: f64,
        alpha: f64,
        /// Updated weights, renormalized to sum to 1.
        weights: Vec<f64>,
    },
}

/// epsilon = sum of weights on misclassified rows / total weight,
/// alpha = ln((1 - epsilon) / epsilon) + ln(K - 1), misclassified weights
/// are multiplied by exp(alpha).
pub fn samme_round(weights: &[f64], miss: &[bool]) -> Result<SammeRound> {
    if weights.len() != miss.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.len(),
            found: miss.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("sample weights sum to zero"));
    }
    let err: f64 = weights.iter().zip(miss).filter(|(_, &m)| m).map(|(w, _)| w).sum();
    let epsilon = err / total;
    if epsilon <= 0.0 {
        return Ok(SammeRound::Perfect);
    }
    if epsilon >= 1.0 - 1.0 / N_CLASSES {
        return Ok(SammeRound::Rejected { epsilon });
    }
    let alpha = ((1.0 - epsilon) / epsilon).ln() + (N_CLASSES - 1.0).ln();
    let boost = alpha.exp();
    let mut updated: Vec<f64> = weights
        .iter()
        .zip(miss)
        .map(|(&w, &m)| if m { w * boost } else { w })
        .collect();
    let sum: f64 = updated.iter().sum();
    for w in &mut updated {
        *w /= sum;
    }
    Ok(SammeRound::Accepted {
        epsilon,
        alpha,
        weights: updated,
    })
}

fn stump_vote(leaf: &LeafValue) -> Label {
    match leaf {
        LeafValue::Class(p) => argmax(*p),
        LeafValue::Score(s) => {
            if *s > 0.0 {
                Label::Positive
            } else {
                Label::Negative
            }
        }
    }
}

pub(super) fn fit(x: &FeatureColumns, y: &[Label], cfg: &EnsembleConfig) -> Result<TrainedModel> {
    let n = x.n();
    let mut weights = vec![1.0 / n as f64; n];
    let tree_cfg = TreeConfig {
        max_depth: Some(cfg.max_depth.unwrap_or(1)),
        min_leaf: cfg.min_leaf,
        ..TreeConfig::default()
    };
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i)).collect();
    let mut members = Vec::new();
    for round in 0..cfg.n_estimators {
        let stump = build_cart(x, y, &weights, &tree_cfg)?;
        let miss: Vec<bool> = rows
            .iter()
            .zip(y)
            .map(|(r, &label)| stump_vote(stump.leaf_unchecked(r)) != label)
            .collect();
        match samme_round(&weights, &miss)? {
            SammeRound::Perfect => {
                members.push(Member {
                    tree: stump,
                    weight: 1.0,
                });
                break;
            }
            SammeRound::Rejected { epsilon } => {
                if round == 0 {
                    return Err(Error::DegenerateLabels(format!(
                        "first weak learner has weighted error {epsilon:.4}, no better than chance"
                    )));
                }
                break;
            }
            SammeRound::Accepted {
                alpha,
                weights: updated,
                ..
            } => {
                members.push(Member {
                    tree: stump,
                    weight: alpha,
                });
                weights = updated;
            }
        }
    }
    Ok(TrainedModel::new(ClassifierKind::AdaBoost, x.d(), cfg.clone(), members))
}

/// Softmax over the per-class sums of stump weights.
pub(super) fn vote_proba(members: &[Member], x: &[f64]) -> [f64; 2] {
    let mut votes = [0.0; 2];
    for m in members {
        votes[stump_vote(m.tree.leaf_unchecked(x)).index()] += m.weight;
    }
    let p1 = 1.0 / (1.0 + (votes[0] - votes[1]).exp());
    [1.0 - p1, p1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::train;
    use crate::synthetic::reference_dataset;

    #[test]
    fn quarter_error_gives_ln3() {
        let w = [0.25; 4];
        let miss = [true, false, false, false];
        let SammeRound::Accepted { epsilon, alpha, weights } = samme_round(&w, &miss).unwrap() else {
            panic!("round should be accepted");
        };
        assert_eq!(epsilon, 0.25);
        assert!((alpha - 3f64.ln()).abs() <= 1e-12);
        assert!((alpha - 1.0986).abs() < 1e-4);
        assert!((weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        // the mistake now carries half of the mass
        assert!((weights[0] - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn chance_and_perfect_rounds() {
        assert_eq!(
            samme_round(&[0.5, 0.5], &[true, false]).unwrap(),
            SammeRound::Rejected { epsilon: 0.5 }
        );
        assert_eq!(samme_round(&[0.5, 0.5], &[false, false]).unwrap(), SammeRound::Perfect);
    }

    #[test]
    fn weights_stay_normalized_and_rounds_beat_chance() {
        let ds = reference_dataset(9);
        let cols = FeatureColumns::from_matrix(&ds);
        let mut w = vec![1.0 / ds.n as f64; ds.n];
        let tree_cfg = TreeConfig {
            max_depth: Some(1),
            ..TreeConfig::default()
        };
        for _ in 0..30 {
            let stump = build_cart(&cols, &ds.labels, &w, &tree_cfg).unwrap();
            let miss: Vec<bool> = (0..ds.n)
                .map(|i| stump_vote(stump.leaf_unchecked(&cols.row(i))) != ds.labels[i])
                .collect();
            match samme_round(&w, &miss).unwrap() {
                SammeRound::Accepted { epsilon, weights, .. } => {
                    assert!(epsilon < 0.5);
                    assert!((weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                    w = weights;
                }
                _ => break,
            }
        }
    }

    #[test]
    fn members_are_stumps() {
        let ds = reference_dataset(42);
        let m = train(ClassifierKind::AdaBoost, &ds, &EnsembleConfig::for_kind(ClassifierKind::AdaBoost)).unwrap();
        assert!(!m.members.is_empty());
        assert!(m.members.iter().all(|s| s.tree.depth() <= 1));
        assert!(m.members.iter().all(|s| s.weight > 0.0));
    }
}
