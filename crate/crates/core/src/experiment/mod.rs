//! Extractor x classifier grid: cross-validates every pair on shared folds,
//! writes the metric and timing tables and exports the winning model.

mod deploy;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::ensemble::{ClassifierKind, EnsembleConfig};
use crate::error::{Error, Result};
use crate::eval::{cross_validate, stratified_kfold, FoldPlan, Metric, MetricSummary};
use crate::extract::{features_load, registry_get, registry_rank};
use crate::preprocess::PreprocessConfig;

pub use deploy::{
    export_best_model, export_model, manifest_path, CvSummary, DeploymentManifest, DEPLOYMENT_FORMAT,
};
pub use report::{
    emit_report, format_cell, load_report, metric_csv, report_checksum, ReportFiles, REPORT_JSON,
};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub extractors: Vec<String>,
    pub classifiers: Vec<ClassifierKind>,
    pub k: usize,
    pub seed: u64,
    /// Replaces the per-kind defaults for the listed kinds.
    pub overrides: Vec<(ClassifierKind, EnsembleConfig)>,
    pub output_dir: PathBuf,
}

impl GridConfig {
    pub fn new(extractors: Vec<String>, classifiers: Vec<ClassifierKind>, output_dir: impl Into<PathBuf>) -> Self {
        GridConfig {
            extractors,
            classifiers,
            k: DEFAULT_K,
            seed: DEFAULT_SEED,
            overrides: Vec::new(),
            output_dir: output_dir.into(),
        }
    }

    /// Defaults for `kind` seeded with the grid seed, unless overridden.
    pub fn config_for(&self, kind: ClassifierKind) -> EnsembleConfig {
        self.overrides
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, c)| c.clone())
            .unwrap_or_else(|| EnsembleConfig::for_kind(kind).with_seed(self.seed))
    }

    pub fn validate(&self) -> Result<()> {
        if self.extractors.is_empty() {
            return Err(Error::invalid("grid needs at least one extractor"));
        }
        if self.classifiers.is_empty() {
            return Err(Error::invalid("grid needs at least one classifier"));
        }
        if self.k < 2 {
            return Err(Error::invalid(format!("k must be >= 2, got {}", self.k)));
        }
        for (kind, cfg) in &self.overrides {
            cfg.validate(*kind)?;
        }
        Ok(())
    }
}

/// How one feature file was produced. Written beside the feature file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub extractor: String,
    pub n: usize,
    pub d: usize,
    pub total_s: f64,
    pub per_image_s: f64,
    pub batch_size: usize,
    pub preprocess: PreprocessConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stub_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub matrix: FeatureMatrix,
    pub extraction: Option<ExtractionRecord>,
}

/// Feature matrices the grid runs on, one per extractor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridInput {
    pub sets: Vec<FeatureSet>,
}

impl GridInput {
    pub fn from_matrices(ms: impl IntoIterator<Item = FeatureMatrix>) -> Self {
        GridInput {
            sets: ms
                .into_iter()
                .map(|matrix| FeatureSet {
                    matrix,
                    extraction: None,
                })
                .collect(),
        }
    }

    pub fn get(&self, extractor: &str) -> Option<&FeatureSet> {
        self.sets
            .iter()
            .find(|s| s.matrix.extractor_name.eq_ignore_ascii_case(extractor))
    }
}

/// Registry spelling of an extractor name, or the name as given.
pub fn canonical_extractor(name: &str) -> String {
    registry_get(name).map(|s| s.name).unwrap_or_else(|| name.to_string())
}

pub fn feature_file_name(extractor: &str) -> String {
    format!("{}.cvfx", canonical_extractor(extractor))
}

pub fn extraction_record_name(extractor: &str) -> String {
    format!("{}.extract.json", canonical_extractor(extractor))
}

impl ExtractionRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            what: "extraction record",
            message: format!("{}: {e}", path.display()),
        })
    }
}

/// Loads `<Extractor>.cvfx` (and its extraction record when present) for
/// every requested extractor. All files are checked for existence before
/// any is read.
pub fn load_feature_dir(dir: &Path, extractors: &[String]) -> Result<GridInput> {
    let missing: Vec<String> = extractors
        .iter()
        .map(|e| dir.join(feature_file_name(e)))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::io(
            dir,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("missing feature files: {}", missing.join(", ")),
            ),
        ));
    }
    let mut sets = Vec::with_capacity(extractors.len());
    for e in extractors {
        let mut matrix = features_load(&dir.join(feature_file_name(e)))?;
        matrix.extractor_name = canonical_extractor(&matrix.extractor_name);
        let record_path = dir.join(extraction_record_name(e));
        let extraction = if record_path.is_file() {
            Some(ExtractionRecord::load(&record_path)?)
        } else {
            None
        };
        sets.push(FeatureSet { matrix, extraction });
    }
    Ok(GridInput { sets })
}

/// Every `*.cvfx` stem in `dir`, in table order.
pub fn discover_extractors(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "cvfx") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                names.push(stem.to_string());
            }
        }
    }
    sort_extractors(&mut names);
    Ok(names)
}

fn sort_extractors(names: &mut [String]) {
    names.sort_by(|a, b| registry_rank(a).cmp(&registry_rank(b)).then_with(|| a.cmp(b)));
}

/// Host facts recorded with every report. Nothing here varies between two
/// runs on the same machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentRecord {
    pub covifex_version: String,
    pub os: String,
    pub arch: String,
    pub host: String,
    pub logical_cpus: usize,
    pub std_convention: String,
}

impl EnvironmentRecord {
    pub fn capture() -> Self {
        let host = fs::read_to_string("/proc/sys/kernel/hostname")
            .ok()
            .or_else(|| std::env::var("HOSTNAME").ok())
            .map(|h| h.trim().to_string())
            .filter(|h| !h.is_empty())
            .unwrap_or_else(|| "unknown".into());
        EnvironmentRecord {
            covifex_version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            host,
            logical_cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            std_convention: "population".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorEntry {
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub plan: FoldPlan,
    pub extraction: Option<ExtractionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub extractor: String,
    pub classifier: ClassifierKind,
    pub summary: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub environment: EnvironmentRecord,
    pub k: usize,
    pub seed: u64,
    /// Table row order.
    pub extractors: Vec<ExtractorEntry>,
    /// Table column order.
    pub classifiers: Vec<ClassifierKind>,
    pub configs: Vec<(ClassifierKind, EnsembleConfig)>,
    /// Row-major over `extractors` x `classifiers`.
    pub cells: Vec<GridCell>,
}

impl GridReport {
    pub fn cell(&self, extractor: &str, kind: ClassifierKind) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.classifier == kind && c.extractor.eq_ignore_ascii_case(extractor))
    }

    pub fn config(&self, kind: ClassifierKind) -> Option<&EnsembleConfig> {
        self.configs.iter().find(|(k, _)| *k == kind).map(|(_, c)| c)
    }

    /// Cell indices ordered best first by mean of `metric`; equal means go
    /// to the lower total training time.
    pub fn ranked(&self, metric: Metric) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.cells.len()).collect();
        idx.sort_by(|&a, &b| {
            let (ca, cb) = (&self.cells[a].summary, &self.cells[b].summary);
            cb.get(metric)
                .mean
                .total_cmp(&ca.get(metric).mean)
                .then_with(|| ca.total_train_time_s().total_cmp(&cb.total_train_time_s()))
        });
        idx
    }

    /// Highest mean accuracy.
    pub fn best(&self) -> Option<&GridCell> {
        self.ranked(Metric::Accuracy).first().map(|&i| &self.cells[i])
    }
}

/// Cross-validates every requested (extractor, classifier) pair. One fold
/// plan is built per extractor and shared by all its classifiers. Missing
/// inputs and unusable label sets are reported before any training.
pub fn run_grid(input: &GridInput, cfg: &GridConfig) -> Result<GridReport> {
    cfg.validate()?;
    let mut names: Vec<String> = cfg.extractors.iter().map(|e| canonical_extractor(e)).collect();
    sort_extractors(&mut names);
    names.dedup();
    let missing: Vec<&str> = names
        .iter()
        .filter(|n| input.get(n).is_none())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "no features for requested extractor(s): {}",
            missing.join(", ")
        )));
    }
    let mut classifiers = cfg.classifiers.clone();
    classifiers.sort_by_key(|k| ClassifierKind::ALL.iter().position(|a| a == k));
    classifiers.dedup();

    let mut extractors = Vec::with_capacity(names.len());
    for name in &names {
        let set = input.get(name).expect("checked above");
        set.matrix.validate()?;
        let plan = stratified_kfold(&set.matrix.labels, cfg.k, cfg.seed)
            .map_err(|e| Error::invalid(format!("{name}: {e}")))?;
        extractors.push(ExtractorEntry {
            name: name.clone(),
            n: set.matrix.n,
            d: set.matrix.d,
            plan,
            extraction: set.extraction.clone(),
        });
    }

    let configs: Vec<(ClassifierKind, EnsembleConfig)> =
        classifiers.iter().map(|&k| (k, cfg.config_for(k))).collect();
    let mut cells = Vec::with_capacity(extractors.len() * classifiers.len());
    for entry in &extractors {
        let x = &input.get(&entry.name).expect("checked above").matrix;
        for (kind, ecfg) in &configs {
            log::info!("cross-validating {} + {}", entry.name, kind.display_name());
            let summary = cross_validate(*kind, x, ecfg, &entry.plan)?;
            cells.push(GridCell {
                extractor: entry.name.clone(),
                classifier: *kind,
                summary,
            });
        }
    }
    Ok(GridReport {
        environment: EnvironmentRecord::capture(),
        k: cfg.k,
        seed: cfg.seed,
        extractors,
        classifiers,
        configs,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::reference_dataset;

    fn small_input() -> GridInput {
        let mut a = reference_dataset(1);
        a.extractor_name = "ResNet50".into();
        let b = reference_dataset(2);
        GridInput::from_matrices([b, a])
    }

    fn quick_cfg(dir: &Path) -> GridConfig {
        let mut cfg = GridConfig::new(
            vec!["stub".into(), "resnet50".into()],
            vec![ClassifierKind::Bagging, ClassifierKind::DecisionTree],
            dir,
        );
        cfg.k = 3;
        cfg.overrides.push((
            ClassifierKind::Bagging,
            EnsembleConfig {
                n_estimators: 5,
                ..EnsembleConfig::for_kind(ClassifierKind::Bagging)
            },
        ));
        cfg
    }

    #[test]
    fn grid_orders_rows_and_columns_and_pairs_folds() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_grid(&small_input(), &quick_cfg(dir.path())).unwrap();
        let rows: Vec<&str> = r.extractors.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(rows, ["ResNet50", "Stub"]);
        assert_eq!(r.classifiers, [ClassifierKind::DecisionTree, ClassifierKind::Bagging]);
        assert_eq!(r.cells.len(), 4);
        assert_eq!(r.cells.iter().map(|c| c.summary.per_fold.len()).sum::<usize>(), 4 * 3);
        assert_eq!(r.config(ClassifierKind::Bagging).unwrap().n_estimators, 5);
        assert_eq!(r.config(ClassifierKind::DecisionTree).unwrap().rng_seed, 42);
    }

    #[test]
    fn missing_extractor_fails_before_training() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = quick_cfg(dir.path());
        cfg.extractors.push("VGG16".into());
        let err = run_grid(&small_input(), &cfg).unwrap_err();
        assert!(err.to_string().contains("VGG16"), "{err}");
        let err = load_feature_dir(dir.path(), &["VGG16".into()]).unwrap_err();
        assert!(err.is_io() && err.to_string().contains("VGG16.cvfx"), "{err}");
    }

    #[test]
    fn ranking_breaks_ties_on_train_time() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = run_grid(&small_input(), &quick_cfg(dir.path())).unwrap();
        for c in &mut r.cells {
            for f in &mut c.summary.per_fold {
                f.positive.accuracy = 0.9;
                f.train_time_s = 1.0;
            }
        }
        for f in &mut r.cells[2].summary.per_fold {
            f.train_time_s = 0.5;
        }
        let cells = r.cells.iter().map(|c| MetricSummary::from_folds(c.summary.per_fold.clone()));
        let sums: Vec<_> = cells.collect();
        for (c, s) in r.cells.iter_mut().zip(sums) {
            c.summary = s;
        }
        assert_eq!(r.ranked(Metric::Accuracy)[0], 2);
    }
}
