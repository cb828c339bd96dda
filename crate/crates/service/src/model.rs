use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use covifex_core::ensemble::{model_load, TrainedModel};
use covifex_core::experiment::{manifest_path, DeploymentManifest};
use covifex_core::extract::{ExtractInput, ExtractorBackend, StubBackend, STUB_EXTRACTOR};
use covifex_core::preprocess::{decode_image, preprocess_pipeline};
use covifex_core::{Error, Label, Result};
use serde::{Deserialize, Serialize};

/// Decision threshold on `probability_positive`; exactly 0.5 is negative,
/// as in the classifiers.
pub const THRESHOLD: f64 = 0.5;

pub const DISCLAIMER: &str = "Research prototype. Not yet approved for diagnostic use: the model has not been clinically validated and must not replace a physician's judgement.";

pub const LABEL_POSITIVE: &str = "COVID-19 Positive";
pub const LABEL_NEGATIVE: &str = "COVID-19 Negative";

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Network file for non-stub extractors.
    pub extractor_model: Option<PathBuf>,
    /// Channels-last input (Keras exports) instead of channels-first.
    pub channels_last: bool,
}

type Factory = Box<dyn Fn() -> Result<Box<dyn ExtractorBackend>> + Send + Sync>;

/// Extractor backends handed out one per request. Backends are
/// single-consumer, so a request takes one and returns it when done; the
/// pool grows on demand.
pub struct BackendPool {
    idle: Mutex<Vec<Box<dyn ExtractorBackend>>>,
    factory: Factory,
}

impl BackendPool {
    pub fn new(factory: Factory) -> Result<Self> {
        let first = factory()?;
        Ok(BackendPool {
            idle: Mutex::new(vec![first]),
            factory,
        })
    }

    pub fn with<T>(&self, f: impl FnOnce(&mut dyn ExtractorBackend) -> Result<T>) -> Result<T> {
        let popped = self.idle.lock().expect("pool lock").pop();
        let mut backend = match popped {
            Some(b) => b,
            None => (self.factory)()?,
        };
        let out = f(backend.as_mut());
        self.idle.lock().expect("pool lock").push(backend);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub extractor: String,
    pub classifier: String,
    pub classifier_name: String,
    pub report_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub decode: f64,
    pub preprocess: f64,
    pub extract: f64,
    pub classify: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub request_id: String,
    pub label: String,
    pub probability_positive: f64,
    pub threshold: f64,
    pub model: ModelInfo,
    pub timing_ms: StageTiming,
    pub disclaimer: String,
}

/// Failure of one prediction, split by who is at fault.
#[derive(Debug)]
pub enum PredictError {
    BadImage(String),
    Internal(String),
}

pub struct LoadedModel {
    pub manifest: DeploymentManifest,
    pub model: TrainedModel,
    pool: BackendPool,
}

fn build_factory(manifest: &DeploymentManifest, opts: &LoadOptions) -> Result<Factory> {
    if manifest.extractor.eq_ignore_ascii_case(STUB_EXTRACTOR) {
        let (dim, seed) = (manifest.feature_dim, manifest.stub_seed.unwrap_or(0));
        return Ok(Box::new(move || Ok(Box::new(StubBackend::new(dim, seed)?) as Box<dyn ExtractorBackend>)));
    }
    let path = opts.extractor_model.clone().ok_or_else(|| {
        Error::invalid(format!(
            "extractor {} needs a network file (COVIFEX_EXTRACTOR_MODEL)",
            manifest.extractor
        ))
    })?;
    onnx_factory(manifest, path, opts.channels_last)
}

#[cfg(feature = "onnx")]
fn onnx_factory(manifest: &DeploymentManifest, path: PathBuf, channels_last: bool) -> Result<Factory> {
    use covifex_core::extract::{OnnxBackend, TensorLayout};
    let spec = manifest.extractor_spec();
    let layout = if channels_last { TensorLayout::Nhwc } else { TensorLayout::Nchw };
    Ok(Box::new(move || {
        Ok(Box::new(OnnxBackend::load(&path, &spec, layout)?) as Box<dyn ExtractorBackend>)
    }))
}

#[cfg(not(feature = "onnx"))]
fn onnx_factory(manifest: &DeploymentManifest, _path: PathBuf, _channels_last: bool) -> Result<Factory> {
    Err(Error::invalid(format!(
        "extractor {} needs ONNX support; rebuild with the `onnx` feature",
        manifest.extractor
    )))
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

impl LoadedModel {
    /// Loads the model and the manifest written beside it.
    pub fn load(model_path: &Path, opts: &LoadOptions) -> Result<Self> {
        let mpath = manifest_path(model_path);
        let manifest = DeploymentManifest::load(&mpath)?;
        if !manifest.verify_model(model_path)? {
            return Err(Error::invalid(format!(
                "{} does not match the checksum in {}",
                model_path.display(),
                mpath.display()
            )));
        }
        let model = model_load(model_path)?;
        if model.kind != manifest.classifier || model.feature_dim != manifest.feature_dim {
            return Err(Error::invalid("model file disagrees with its deployment manifest"));
        }
        let pool = BackendPool::new(build_factory(&manifest, opts)?)?;
        Ok(LoadedModel { manifest, model, pool })
    }

    pub fn info(&self) -> ModelInfo {
        ModelInfo {
            extractor: self.manifest.extractor.clone(),
            classifier: self.manifest.classifier.as_str().into(),
            classifier_name: self.manifest.classifier_name.clone(),
            report_checksum: self.manifest.report_checksum.clone(),
        }
    }

    /// Decode, condition, extract and classify one uploaded image.
    pub fn predict(&self, bytes: &[u8], request_id: String) -> std::result::Result<PredictionResponse, PredictError> {
        let start = Instant::now();
        let t = Instant::now();
        let img = decode_image(bytes).map_err(|e| PredictError::BadImage(e.to_string()))?;
        let decode = ms(t);
        let t = Instant::now();
        let pre = preprocess_pipeline(&img, &self.manifest.preprocess)
            .map_err(|e| PredictError::BadImage(e.to_string()))?;
        let preprocess = ms(t);
        let t = Instant::now();
        let features = self
            .pool
            .with(|b| {
                b.run(&[ExtractInput {
                    id: &request_id,
                    image: Some(&pre.image),
                }])
            })
            .map_err(|e| PredictError::Internal(e.to_string()))?;
        let extract = ms(t);
        let t = Instant::now();
        let row = features
            .first()
            .ok_or_else(|| PredictError::Internal("extractor returned no features".into()))?;
        let p = self
            .model
            .predict_proba_f32(row)
            .map_err(|e| PredictError::Internal(e.to_string()))?[Label::Positive.index()];
        let classify = ms(t);
        let label = if p > THRESHOLD { LABEL_POSITIVE } else { LABEL_NEGATIVE };
        Ok(PredictionResponse {
            request_id,
            label: label.into(),
            probability_positive: p,
            threshold: THRESHOLD,
            model: self.info(),
            timing_ms: StageTiming {
                decode,
                preprocess,
                extract,
                classify,
                total: ms(start),
            },
            disclaimer: DISCLAIMER.into(),
        })
    }
}

pub type SharedModel = Arc<LoadedModel>;
