//! Stratified k-fold cross-validation, binary metrics and timing.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, Label};
use crate::ensemble::{train, ClassifierKind, EnsembleConfig};
use crate::error::{Error, Result};

/// Disjoint test folds covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
    pub stratified: bool,
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    /// Test rows of fold `f`, ascending.
    pub fn test(&self, f: usize) -> &[usize] {
        &self.folds[f]
    }

    /// Every row not in fold `f`, ascending.
    pub fn train(&self, f: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, rows)| rows.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

/// Shuffles each class with one seeded stream (negatives first) and deals
/// the rows round-robin. The deal position carries over from one class to
/// the next, so fold sizes differ by at most one overall as well.
pub fn stratified_kfold(labels: &[Label], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be >= 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0usize;
    for class in Label::ALL {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if rows.len() < k {
            return Err(Error::DegenerateLabels(format!(
                "class {class} has {} members, fewer than k = {k}",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        for r in rows {
            folds[next].push(r);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan {
        k,
        folds,
        seed,
        stratified: true,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// The same counts with the negative class treated as positive.
    pub fn swapped(&self) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

/// Positive is `Label::Positive`.
pub fn confusion(y_true: &[Label], y_pred: &[Label]) -> Result<ConfusionCounts> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            found: y_pred.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (Label::Positive, Label::Positive) => c.tp += 1,
            (Label::Positive, Label::Negative) => c.fn_ += 1,
            (Label::Negative, Label::Positive) => c.fp += 1,
            (Label::Negative, Label::Negative) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Set when a ratio had a zero denominator and was reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateFlags {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

impl DegenerateFlags {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub flags: DegenerateFlags,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Accuracy, and precision, recall and F1 of the positive class.
pub fn metrics(c: &ConfusionCounts) -> Result<Metrics> {
    let total = c.total();
    if total == 0 {
        return Err(Error::invalid("metrics of an empty confusion matrix"));
    }
    let accuracy = (c.tp + c.tn) as f64 / total as f64;
    let (recall, r_flag) = ratio(c.tp, c.tp + c.fn_);
    let (precision, p_flag) = ratio(c.tp, c.tp + c.fp);
    let (f1, f_flag) = if precision + recall > 0.0 {
        (2.0 * recall * precision / (recall + precision), false)
    } else {
        (0.0, true)
    };
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
        flags: DegenerateFlags {
            precision: p_flag,
            recall: r_flag,
            f1: f_flag,
        },
    })
}

/// Unweighted mean over both classes of the per-class precision, recall
/// and F1. Accuracy is unchanged.
pub fn metrics_macro(c: &ConfusionCounts) -> Result<Metrics> {
    let pos = metrics(c)?;
    let neg = metrics(&c.swapped())?;
    Ok(Metrics {
        accuracy: pos.accuracy,
        precision: (pos.precision + neg.precision) / 2.0,
        recall: (pos.recall + neg.recall) / 2.0,
        f1: (pos.f1 + neg.f1) / 2.0,
        flags: DegenerateFlags {
            precision: pos.flags.precision || neg.flags.precision,
            recall: pos.flags.recall || neg.flags.recall,
            f1: pos.flags.f1 || neg.flags.f1,
        },
    })
}

/// The quantities aggregated per fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Precision,
    Recall,
    F1,
    MacroPrecision,
    MacroRecall,
    MacroF1,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Accuracy,
        Metric::Precision,
        Metric::Recall,
        Metric::F1,
        Metric::MacroPrecision,
        Metric::MacroRecall,
        Metric::MacroF1,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
            Metric::MacroPrecision => "macro_precision",
            Metric::MacroRecall => "macro_recall",
            Metric::MacroF1 => "macro_f1",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Metric::Accuracy => "Accuracy",
            Metric::Precision => "Precision (positive class)",
            Metric::Recall => "Recall (positive class)",
            Metric::F1 => "F1 (positive class)",
            Metric::MacroPrecision => "Precision (macro average)",
            Metric::MacroRecall => "Recall (macro average)",
            Metric::MacroF1 => "F1 (macro average)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub confusion: ConfusionCounts,
    pub positive: Metrics,
    pub macro_avg: Metrics,
    pub train_time_s: f64,
    pub predict_time_s: f64,
}

impl FoldRecord {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Accuracy => self.positive.accuracy,
            Metric::Precision => self.positive.precision,
            Metric::Recall => self.positive.recall,
            Metric::F1 => self.positive.f1,
            Metric::MacroPrecision => self.macro_avg.precision,
            Metric::MacroRecall => self.macro_avg.recall,
            Metric::MacroF1 => self.macro_avg.f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Arithmetic mean and population standard deviation. Empty input gives
/// zeros.
pub fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub per_fold: Vec<FoldRecord>,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub macro_precision: MeanStd,
    pub macro_recall: MeanStd,
    pub macro_f1: MeanStd,
    pub train_time_s: MeanStd,
    pub predict_time_s: MeanStd,
}

impl MetricSummary {
    pub fn from_folds(per_fold: Vec<FoldRecord>) -> MetricSummary {
        let agg = |m: Metric| mean_std(&per_fold.iter().map(|r| r.get(m)).collect::<Vec<_>>());
        let train = mean_std(&per_fold.iter().map(|r| r.train_time_s).collect::<Vec<_>>());
        let predict = mean_std(&per_fold.iter().map(|r| r.predict_time_s).collect::<Vec<_>>());
        MetricSummary {
            accuracy: agg(Metric::Accuracy),
            precision: agg(Metric::Precision),
            recall: agg(Metric::Recall),
            f1: agg(Metric::F1),
            macro_precision: agg(Metric::MacroPrecision),
            macro_recall: agg(Metric::MacroRecall),
            macro_f1: agg(Metric::MacroF1),
            train_time_s: train,
            predict_time_s: predict,
            per_fold,
        }
    }

    pub fn get(&self, m: Metric) -> MeanStd {
        match m {
            Metric::Accuracy => self.accuracy,
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
            Metric::MacroPrecision => self.macro_precision,
            Metric::MacroRecall => self.macro_recall,
            Metric::MacroF1 => self.macro_f1,
        }
    }

    pub fn total_train_time_s(&self) -> f64 {
        self.per_fold.iter().map(|r| r.train_time_s).sum()
    }

    pub fn total_predict_time_s(&self) -> f64 {
        self.per_fold.iter().map(|r| r.predict_time_s).sum()
    }
}

/// Runs `thunk` and returns its result with the elapsed wall time.
pub fn time_block<T>(label: &str, thunk: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = thunk();
    let secs = start.elapsed().as_secs_f64();
    log::debug!("{label}: {secs:.6} s");
    (out, secs)
}

/// Trains on all folds but one and scores the held-out fold, for every
/// fold in turn. Folds run one after another so the timings are not
/// distorted by each other.
pub fn cross_validate(
    kind: ClassifierKind,
    x: &FeatureMatrix,
    cfg: &EnsembleConfig,
    plan: &FoldPlan,
) -> Result<MetricSummary> {
    x.validate()?;
    if plan.n() != x.n {
        return Err(Error::DimensionMismatch {
            expected: x.n,
            found: plan.n(),
        });
    }
    let mut per_fold = Vec::with_capacity(plan.k);
    for f in 0..plan.k {
        let train_set = x.select_rows(&plan.train(f));
        let test_set = x.select_rows(plan.test(f));
        let (model, train_time_s) = time_block("train", || train(kind, &train_set, cfg));
        let model = model?;
        let (pred, predict_time_s) = time_block("predict", || model.predict_matrix(&test_set));
        let c = confusion(&test_set.labels, &pred?)?;
        per_fold.push(FoldRecord {
            fold: f,
            confusion: c,
            positive: metrics(&c)?,
            macro_avg: metrics_macro(&c)?,
            train_time_s,
            predict_time_s,
        });
    }
    Ok(MetricSummary::from_folds(per_fold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(bits: &[u8]) -> Vec<Label> {
        bits.iter().map(|&b| Label::from_u8(b).unwrap()).collect()
    }

    #[test]
    fn worked_confusion_and_metrics() {
        let t = labels(&[1, 1, 1, 1, 0, 0, 0, 0, 0, 0]);
        let p = labels(&[1, 1, 1, 0, 0, 0, 0, 0, 0, 1]);
        let c = confusion(&t, &p).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (3, 1, 1, 5));
        let m = metrics(&c).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (0.8, 0.75, 0.75, 0.75));
        assert!(!m.flags.any());
    }

    #[test]
    fn degenerate_and_empty() {
        let c = confusion(&[], &[]).unwrap();
        assert_eq!(c, ConfusionCounts::default());
        assert!(metrics(&c).is_err());
        let c = ConfusionCounts { tp: 0, fp: 0, tn: 3, fn_: 2 };
        let m = metrics(&c).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(m.flags.precision && m.flags.f1 && !m.flags.recall);
        assert!(confusion(&labels(&[1]), &[]).is_err());
    }

    #[test]
    fn perfect_prediction() {
        let y = labels(&[0, 1, 1, 0, 1]);
        let c = confusion(&y, &y).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let m = metrics(&c).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(metrics_macro(&c).unwrap().f1, 1.0);
    }

    #[test]
    fn folds_for_274_rows() {
        let y: Vec<Label> = (0..274).map(|i| Label::from_u8((i % 2) as u8).unwrap()).collect();
        let plan = stratified_kfold(&y, 10, 42).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 274);
        assert!(sizes.iter().all(|&s| s == 27 || s == 28), "{sizes:?}");
        for fold in &plan.folds {
            for class in Label::ALL {
                let c = fold.iter().filter(|&&i| y[i] == class).count();
                assert!(c == 13 || c == 14);
            }
        }
        assert_eq!(stratified_kfold(&y, 10, 42).unwrap(), plan);
    }

    #[test]
    fn tiny_plan_and_errors() {
        let y = labels(&[0, 0, 1, 1]);
        let plan = stratified_kfold(&y, 2, 1).unwrap();
        for fold in &plan.folds {
            let mut got: Vec<Label> = fold.iter().map(|&i| y[i]).collect();
            got.sort();
            assert_eq!(got, labels(&[0, 1]));
        }
        let err = stratified_kfold(&labels(&[0, 0, 0, 1]), 2, 1).unwrap_err();
        assert!(err.to_string().contains("class 1"), "{err}");
        assert!(stratified_kfold(&y, 1, 1).is_err());
    }

    #[test]
    fn population_std() {
        let s = mean_std(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
    }

    #[test]
    fn time_block_noop() {
        let ((), t) = time_block("noop", || ());
        assert!((0.0..1e-3).contains(&t));
    }

    proptest! {
        #[test]
        fn f1_between_precision_and_recall(tp in 1u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 0u64..50) {
            let m = metrics(&ConfusionCounts { tp, fp, tn, fn_ }).unwrap();
            let lo = m.precision.min(m.recall);
            let hi = m.precision.max(m.recall);
            prop_assert!(lo - 1e-15 <= m.f1 && m.f1 <= hi + 1e-15);
        }

        #[test]
        fn folds_partition(n in 20usize..200, k in 2usize..10, seed: u64, ratio in 0.2f64..0.8) {
            let n_pos = ((n as f64 * ratio) as usize).clamp(k, n - k);
            let y: Vec<Label> = (0..n).map(|i| if i < n_pos { Label::Positive } else { Label::Negative }).collect();
            let plan = stratified_kfold(&y, k, seed).unwrap();
            let mut all: Vec<usize> = plan.folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            for f in 0..k {
                prop_assert_eq!(plan.train(f).len() + plan.test(f).len(), n);
            }
        }
    }
}
