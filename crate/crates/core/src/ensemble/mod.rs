//! The six tree-based classifiers behind one train / predict contract.

mod adaboost;
mod bagging;
mod gbdt;
mod io;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, Label};
use crate::error::{Error, Result};
use crate::tree::{FeatureColumns, FeatureSubsample, Tree};

pub use adaboost::{samme_round, SammeRound};
pub use gbdt::{log_loss, sigmoid};
pub use io::{model_load, model_read, model_save, model_write, MODEL_FILE_MAGIC, MODEL_FILE_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    DecisionTree,
    RandomForest,
    /// Level-wise second-order boosting (XGBoost-style).
    GbdtLevelwise,
    AdaBoost,
    Bagging,
    /// Leaf-wise histogram boosting (LightGBM-style).
    GbdtLeafwise,
}

impl ClassifierKind {
    /// Report column order.
    pub const ALL: [ClassifierKind; 6] = [
        ClassifierKind::DecisionTree,
        ClassifierKind::RandomForest,
        ClassifierKind::GbdtLevelwise,
        ClassifierKind::AdaBoost,
        ClassifierKind::Bagging,
        ClassifierKind::GbdtLeafwise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::DecisionTree => "decision_tree",
            ClassifierKind::RandomForest => "random_forest",
            ClassifierKind::Bagging => "bagging",
            ClassifierKind::AdaBoost => "adaboost",
            ClassifierKind::GbdtLevelwise => "gbdt_levelwise",
            ClassifierKind::GbdtLeafwise => "gbdt_leafwise",
        }
    }

    /// Column heading used in the tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ClassifierKind::DecisionTree => "Decision Tree",
            ClassifierKind::RandomForest => "Random Forest",
            ClassifierKind::GbdtLevelwise => "XGBoost",
            ClassifierKind::AdaBoost => "AdaBoost",
            ClassifierKind::Bagging => "Bagging",
            ClassifierKind::GbdtLeafwise => "LightGBM",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            ClassifierKind::DecisionTree => 1,
            ClassifierKind::RandomForest => 2,
            ClassifierKind::Bagging => 3,
            ClassifierKind::AdaBoost => 4,
            ClassifierKind::GbdtLevelwise => 5,
            ClassifierKind::GbdtLeafwise => 6,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        ClassifierKind::ALL.into_iter().find(|k| k.tag() == tag)
    }

    pub fn is_gbdt(self) -> bool {
        matches!(self, ClassifierKind::GbdtLevelwise | ClassifierKind::GbdtLeafwise)
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        let kind = match norm.as_str() {
            "decision_tree" | "dt" => ClassifierKind::DecisionTree,
            "random_forest" | "rf" => ClassifierKind::RandomForest,
            "bagging" => ClassifierKind::Bagging,
            "adaboost" => ClassifierKind::AdaBoost,
            "gbdt_levelwise" | "xgboost" => ClassifierKind::GbdtLevelwise,
            "gbdt_leafwise" | "lightgbm" => ClassifierKind::GbdtLeafwise,
            _ => return Err(Error::invalid(format!("unknown classifier {s:?}"))),
        };
        Ok(kind)
    }
}

/// Hyperparameters for every kind. Fields a kind does not use are carried
/// along unchanged so reports echo the full configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: Option<usize>,
    pub num_leaves: usize,
    pub n_bins: usize,
    /// Fraction of rows drawn per member (bagging, forest) or per round
    /// (boosting).
    pub subsample_ratio: f64,
    /// Draw with replacement. Only bagging and random forest use it.
    pub bootstrap: bool,
    pub feature_subsample: FeatureSubsample,
    pub rng_seed: u64,
    pub l2_leaf_penalty: f64,
    pub min_leaf: usize,
    pub min_child_weight: f64,
}

impl EnsembleConfig {
    pub fn for_kind(kind: ClassifierKind) -> Self {
        let base = EnsembleConfig {
            n_estimators: 1,
            learning_rate: 1.0,
            max_depth: None,
            num_leaves: 31,
            n_bins: 255,
            subsample_ratio: 1.0,
            bootstrap: false,
            feature_subsample: FeatureSubsample::All,
            rng_seed: 0,
            l2_leaf_penalty: 1.0,
            min_leaf: 1,
            min_child_weight: 0.0,
        };
        match kind {
            ClassifierKind::DecisionTree => base,
            ClassifierKind::Bagging => EnsembleConfig {
                n_estimators: 100,
                bootstrap: true,
                ..base
            },
            ClassifierKind::RandomForest => EnsembleConfig {
                n_estimators: 100,
                bootstrap: true,
                feature_subsample: FeatureSubsample::Sqrt,
                ..base
            },
            ClassifierKind::AdaBoost => EnsembleConfig {
                n_estimators: 50,
                max_depth: Some(1),
                ..base
            },
            ClassifierKind::GbdtLevelwise => EnsembleConfig {
                n_estimators: 100,
                learning_rate: 0.1,
                max_depth: Some(6),
                min_child_weight: 1.0,
                ..base
            },
            ClassifierKind::GbdtLeafwise => EnsembleConfig {
                n_estimators: 100,
                learning_rate: 0.1,
                num_leaves: 31,
                n_bins: 255,
                min_leaf: 20,
                min_child_weight: 1e-3,
                ..base
            },
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self, kind: ClassifierKind) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate must be in (0, 1], got {}", self.learning_rate));
        }
        if !kind.is_gbdt() && self.n_estimators == 0 {
            return bad("n_estimators must be >= 1".into());
        }
        if kind.is_gbdt() && !(2..=255).contains(&self.n_bins) {
            return bad(format!("n_bins must be in [2, 255], got {}", self.n_bins));
        }
        if !(self.subsample_ratio > 0.0 && self.subsample_ratio <= 1.0) {
            return bad(format!("subsample_ratio must be in (0, 1], got {}", self.subsample_ratio));
        }
        if !(self.l2_leaf_penalty >= 0.0 && self.l2_leaf_penalty.is_finite()) {
            return bad("l2_leaf_penalty must be finite and >= 0".into());
        }
        if self.num_leaves < 2 {
            return bad("num_leaves must be >= 2".into());
        }
        if self.min_leaf == 0 {
            return bad("min_leaf must be >= 1".into());
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return bad("min_child_weight must be finite and >= 0".into());
        }
        if let FeatureSubsample::Count(0) = self.feature_subsample {
            return bad("feature_subsample count must be >= 1".into());
        }
        Ok(())
    }
}

/// One tree of an ensemble with its vote or score weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub tree: Tree,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub kind: ClassifierKind,
    pub feature_dim: usize,
    pub config: EnsembleConfig,
    pub members: Vec<Member>,
    /// Initial raw score of the boosting kinds (log-odds of the base rate).
    pub base_score: f64,
    /// Boosting only: mean training log-loss before the first round and
    /// after every round.
    pub loss_curve: Vec<f64>,
    /// Wall-clock training time. Not persisted, so a reloaded model reads 0.
    pub train_time_s: f64,
}

/// Fits a classifier of the given kind on a validated feature matrix.
pub fn train(kind: ClassifierKind, x: &FeatureMatrix, cfg: &EnsembleConfig) -> Result<TrainedModel> {
    x.validate()?;
    cfg.validate(kind)?;
    let counts = x.class_counts();
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::DegenerateLabels(format!(
            "training set has {} negative and {} positive rows; both classes are required",
            counts[0], counts[1]
        )));
    }
    let start = Instant::now();
    let cols = FeatureColumns::from_matrix(x);
    let mut model = match kind {
        ClassifierKind::DecisionTree => bagging::fit_single(&cols, &x.labels, cfg)?,
        ClassifierKind::Bagging | ClassifierKind::RandomForest => {
            bagging::fit(kind, &cols, &x.labels, cfg)?
        }
        ClassifierKind::AdaBoost => adaboost::fit(&cols, &x.labels, cfg)?,
        ClassifierKind::GbdtLevelwise | ClassifierKind::GbdtLeafwise => {
            gbdt::fit(kind, &cols, &x.labels, cfg)?
        }
    };
    model.train_time_s = start.elapsed().as_secs_f64();
    Ok(model)
}

impl TrainedModel {
    pub(crate) fn new(
        kind: ClassifierKind,
        feature_dim: usize,
        config: EnsembleConfig,
        members: Vec<Member>,
    ) -> Self {
        TrainedModel {
            kind,
            feature_dim,
            config,
            members,
            base_score: 0.0,
            loss_curve: Vec::new(),
            train_time_s: 0.0,
        }
    }

    fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `[P(negative), P(positive)]`.
    pub fn predict_proba(&self, x: &[f64]) -> Result<[f64; 2]> {
        self.check_width(x)?;
        Ok(self.proba_unchecked(x))
    }

    pub(crate) fn proba_unchecked(&self, x: &[f64]) -> [f64; 2] {
        match self.kind {
            ClassifierKind::DecisionTree | ClassifierKind::Bagging | ClassifierKind::RandomForest => {
                bagging::average_proba(&self.members, x)
            }
            ClassifierKind::AdaBoost => adaboost::vote_proba(&self.members, x),
            ClassifierKind::GbdtLevelwise | ClassifierKind::GbdtLeafwise => {
                let p = sigmoid(gbdt::raw_score(self.base_score, &self.members, x));
                [1.0 - p, p]
            }
        }
    }

    /// Argmax of [`predict_proba`](Self::predict_proba); ties go to the
    /// negative class.
    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        let p = self.predict_proba(x)?;
        Ok(argmax(p))
    }

    pub fn predict_f32(&self, x: &[f32]) -> Result<Label> {
        let v: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        self.predict(&v)
    }

    pub fn predict_proba_f32(&self, x: &[f32]) -> Result<[f64; 2]> {
        let v: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        self.predict_proba(&v)
    }

    /// Predicts every row of a matrix.
    pub fn predict_matrix(&self, m: &FeatureMatrix) -> Result<Vec<Label>> {
        if m.d != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                found: m.d,
            });
        }
        let mut row = vec![0.0; m.d];
        (0..m.n)
            .map(|i| {
                for (dst, src) in row.iter_mut().zip(m.row(i)) {
                    *dst = *src as f64;
                }
                Ok(argmax(self.proba_unchecked(&row)))
            })
            .collect()
    }
}

#[inline]
pub(crate) fn argmax(p: [f64; 2]) -> Label {
    if p[1] > p[0] {
        Label::Positive
    } else {
        Label::Negative
    }
}

/// `predict_proba` under its specification name.
pub fn predict_proba(m: &TrainedModel, x: &[f64]) -> Result<[f64; 2]> {
    m.predict_proba(x)
}

pub fn predict(m: &TrainedModel, x: &[f64]) -> Result<Label> {
    m.predict(x)
}
