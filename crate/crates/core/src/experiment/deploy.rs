use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{report_checksum, FeatureSet, GridConfig, GridInput, GridReport};
use crate::ensemble::{model_save, train, ClassifierKind, TrainedModel};
use crate::error::{Error, Result};
use crate::eval::{MeanStd, Metric};
use crate::extract::{registry_get, ExtractorSpec, DEFAULT_STUB_DIM};
use crate::preprocess::PreprocessConfig;

pub const DEPLOYMENT_FORMAT: &str = "covifex-deployment/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub k: usize,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

/// Everything the service needs to rebuild the inference path of an
/// exported model, plus where its numbers came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentManifest {
    pub format: String,
    pub extractor: String,
    pub input_height: usize,
    pub input_width: usize,
    pub feature_dim: usize,
    pub classifier: ClassifierKind,
    pub classifier_name: String,
    /// File name of the model, relative to the manifest.
    pub model_file: String,
    pub model_sha256: String,
    pub preprocess: PreprocessConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stub_seed: Option<u64>,
    pub seed: u64,
    /// Cross-validated scores of the exported cell; absent for models
    /// trained outside a grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvSummary>,
    /// Checksum of the grid report the model was selected from; empty for
    /// models trained outside a grid.
    #[serde(default)]
    pub report_checksum: String,
}

/// `model.cvmd` -> `model.manifest.json`.
pub fn manifest_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("manifest.json")
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl DeploymentManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DeploymentManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            what: "deployment manifest",
            message: format!("{}: {e}", path.display()),
        })?;
        if m.format != DEPLOYMENT_FORMAT {
            return Err(Error::Format {
                what: "deployment manifest",
                message: format!("unknown format {:?}", m.format),
            });
        }
        Ok(m)
    }

    /// Model path resolved against the manifest's directory.
    pub fn model_path(&self, manifest_path: &Path) -> PathBuf {
        manifest_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(&self.model_file)
    }

    pub fn extractor_spec(&self) -> ExtractorSpec {
        ExtractorSpec {
            name: self.extractor.clone(),
            input_height: self.input_height,
            input_width: self.input_width,
            model_path: None,
            output_dim: Some(self.feature_dim),
        }
    }

    pub fn verify_model(&self, model_path: &Path) -> Result<bool> {
        Ok(sha256_file(model_path)? == self.model_sha256)
    }

    pub fn verify_report(&self, report_dir: &Path) -> Result<bool> {
        Ok(report_checksum(report_dir)? == self.report_checksum)
    }
}

/// Saves `model` to `model_path` and writes its deployment manifest beside
/// it. `set` must be the features the model was trained on.
pub fn export_model(
    model: &TrainedModel,
    set: &FeatureSet,
    seed: u64,
    cv: Option<CvSummary>,
    report_checksum: &str,
    model_path: &Path,
) -> Result<DeploymentManifest> {
    model_save(model, model_path)?;
    let extractor = set.matrix.extractor_name.clone();
    let spec = registry_get(&extractor).unwrap_or_else(|| ExtractorSpec::stub(DEFAULT_STUB_DIM));
    let preprocess = set
        .extraction
        .as_ref()
        .map(|x| x.preprocess.clone())
        .unwrap_or_else(|| spec.preprocess_config());
    let manifest = DeploymentManifest {
        format: DEPLOYMENT_FORMAT.into(),
        extractor,
        input_height: preprocess.target_height,
        input_width: preprocess.target_width,
        feature_dim: set.matrix.d,
        classifier: model.kind,
        classifier_name: model.kind.display_name().into(),
        model_file: model_path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        model_sha256: sha256_file(model_path)?,
        preprocess,
        stub_seed: set.extraction.as_ref().and_then(|x| x.stub_seed),
        seed,
        cv,
        report_checksum: report_checksum.to_string(),
    };
    manifest.save(&manifest_path(model_path))?;
    Ok(manifest)
}

/// Retrains the best cell of `r` on every row of its extractor's features,
/// saves it to `model_path` and writes the deployment manifest beside it.
pub fn export_best_model(
    r: &GridReport,
    input: &GridInput,
    grid: &GridConfig,
    report_checksum: &str,
    model_path: &Path,
) -> Result<(TrainedModel, DeploymentManifest)> {
    let best = r.best().ok_or_else(|| Error::invalid("report has no cells"))?;
    let set = input
        .get(&best.extractor)
        .ok_or_else(|| Error::invalid(format!("no features for {}", best.extractor)))?;
    let cfg = r
        .config(best.classifier)
        .cloned()
        .unwrap_or_else(|| grid.config_for(best.classifier));
    let model = train(best.classifier, &set.matrix, &cfg)?;
    let s = &best.summary;
    let cv = CvSummary {
        k: r.k,
        accuracy: s.get(Metric::Accuracy),
        precision: s.get(Metric::Precision),
        recall: s.get(Metric::Recall),
        f1: s.get(Metric::F1),
    };
    let manifest = export_model(&model, set, r.seed, Some(cv), report_checksum, model_path)?;
    Ok((model, manifest))
}
