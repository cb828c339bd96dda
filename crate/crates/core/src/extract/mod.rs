//! Deep-feature extraction.
//!
//! A backend turns a batch of conditioned images into fixed-length vectors.
//! Three backends ship: ONNX inference (feature `onnx`), lookup of
//! precomputed vectors by sample id, and a seeded random-projection stub
//! used when no model files are around.

mod file;
#[cfg(feature = "onnx")]
mod onnx;
mod stub;

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureMatrix, ImageTensor, Label};
use crate::error::{Error, Result};
use crate::preprocess::{load_image, preprocess_pipeline, PreprocessConfig};

pub use file::{
    features_from_csv, features_load, features_read, features_save, features_to_csv,
    features_write, FEATURE_FILE_MAGIC, FEATURE_FILE_VERSION,
};
#[cfg(feature = "onnx")]
pub use onnx::{OnnxBackend, TensorLayout};
pub use stub::{StubBackend, DEFAULT_STUB_DIM};

pub const DEFAULT_BATCH_SIZE: usize = 8;

/// Name used for the random-projection stub extractor.
pub const STUB_EXTRACTOR: &str = "Stub";

/// One pretrained architecture and its input geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub name: String,
    pub input_height: usize,
    pub input_width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    /// Known once a backend has been loaded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dim: Option<usize>,
}

impl ExtractorSpec {
    fn square(name: &str, side: usize) -> Self {
        ExtractorSpec {
            name: name.to_string(),
            input_height: side,
            input_width: side,
            model_path: None,
            output_dim: None,
        }
    }

    pub fn stub(dim: usize) -> Self {
        ExtractorSpec {
            output_dim: Some(dim),
            ..Self::square(STUB_EXTRACTOR, 64)
        }
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig::for_input(self.input_height, self.input_width)
    }
}

const REGISTRY: [(&str, usize); 15] = [
    ("MobileNet", 224),
    ("DenseNet121", 224),
    ("DenseNet201", 224),
    ("Xception", 224),
    ("InceptionV3", 224),
    ("InceptionResNetV2", 224),
    ("ResNet50", 224),
    ("ResNet152", 224),
    ("VGG16", 224),
    ("VGG19", 224),
    ("NASNetLarge", 331),
    ("NASNetMobile", 224),
    ("ResNet50V2", 224),
    ("ResNet101V2", 224),
    ("ResNet152V2", 224),
];

/// The fifteen supported architectures, in report row order.
pub fn registry_list() -> Vec<ExtractorSpec> {
    REGISTRY
        .iter()
        .map(|&(name, side)| ExtractorSpec::square(name, side))
        .collect()
}

/// Looks up a registry entry (or the stub) by name, case-insensitively.
pub fn registry_get(name: &str) -> Option<ExtractorSpec> {
    if name.eq_ignore_ascii_case(STUB_EXTRACTOR) {
        return Some(ExtractorSpec::stub(stub::DEFAULT_STUB_DIM));
    }
    registry_list()
        .into_iter()
        .find(|s| s.name.eq_ignore_ascii_case(name))
}

/// Position of `name` in the registry; the stub and unknown names sort last.
pub fn registry_rank(name: &str) -> usize {
    REGISTRY
        .iter()
        .position(|(n, _)| n.eq_ignore_ascii_case(name))
        .unwrap_or(REGISTRY.len())
}

/// One item handed to a backend.
#[derive(Debug, Clone, Copy)]
pub struct ExtractInput<'a> {
    pub id: &'a str,
    /// Absent when the backend does not need pixels.
    pub image: Option<&'a ImageTensor>,
}

/// Feature-producing backend. Instances are single-consumer; run one per
/// worker for parallelism.
pub trait ExtractorBackend: Send {
    fn name(&self) -> &str;

    /// Feature length, if known before the first run.
    fn output_dim(&self) -> Option<usize>;

    fn needs_pixels(&self) -> bool {
        true
    }

    fn run(&mut self, batch: &[ExtractInput<'_>]) -> Result<Vec<Vec<f32>>>;
}

/// Returns exactly the stored vector for each known sample id.
#[derive(Debug, Clone)]
pub struct PrecomputedBackend {
    name: String,
    dim: usize,
    table: HashMap<String, Vec<f32>>,
}

impl PrecomputedBackend {
    pub fn from_matrix(m: &FeatureMatrix) -> Self {
        let table = (0..m.n)
            .map(|i| (m.sample_ids[i].clone(), m.row(i).to_vec()))
            .collect();
        PrecomputedBackend {
            name: m.extractor_name.clone(),
            dim: m.d,
            table,
        }
    }
}

impl ExtractorBackend for PrecomputedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn output_dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn needs_pixels(&self) -> bool {
        false
    }

    fn run(&mut self, batch: &[ExtractInput<'_>]) -> Result<Vec<Vec<f32>>> {
        batch
            .iter()
            .map(|item| {
                self.table
                    .get(item.id)
                    .cloned()
                    .ok_or_else(|| Error::Backend(format!("no precomputed features for {:?}", item.id)))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionTiming {
    pub total_s: f64,
    pub per_image_s: f64,
}

/// Runs every sample of `ds` through `backend` in dataset order.
pub fn extract_features(
    ds: &Dataset,
    spec: &ExtractorSpec,
    cfg: &PreprocessConfig,
    backend: &mut dyn ExtractorBackend,
    batch_size: usize,
) -> Result<(FeatureMatrix, ExtractionTiming)> {
    let batch_size = batch_size.max(1);
    let start = Instant::now();
    let mut values = Vec::new();
    let mut dim = backend.output_dim();

    for chunk in ds.samples().chunks(batch_size) {
        let images: Vec<Option<ImageTensor>> = if backend.needs_pixels() {
            chunk
                .iter()
                .map(|s| {
                    let raw = load_image(&s.source_path).map_err(|e| Error::Image {
                        id: s.id.clone(),
                        message: e.to_string(),
                    })?;
                    let pre = preprocess_pipeline(&raw, cfg).map_err(|e| Error::Image {
                        id: s.id.clone(),
                        message: e.to_string(),
                    })?;
                    Ok(Some(pre.image))
                })
                .collect::<Result<_>>()?
        } else {
            vec![None; chunk.len()]
        };
        let inputs: Vec<ExtractInput<'_>> = chunk
            .iter()
            .zip(&images)
            .map(|(s, img)| ExtractInput {
                id: &s.id,
                image: img.as_ref(),
            })
            .collect();
        let out = backend.run(&inputs)?;
        if out.len() != chunk.len() {
            return Err(Error::Backend(format!(
                "internal error: backend returned {} vectors for a batch of {}",
                out.len(),
                chunk.len()
            )));
        }
        for v in out {
            let d = *dim.get_or_insert(v.len());
            if v.len() != d {
                return Err(Error::Backend(format!(
                    "internal error: feature length changed from {d} to {}",
                    v.len()
                )));
            }
            values.extend(v);
        }
    }

    let total_s = start.elapsed().as_secs_f64();
    let n = ds.len();
    let d = dim.unwrap_or(0).max(1);
    let labels: Vec<Label> = ds.samples().iter().map(|s| s.label).collect();
    let ids = ds.samples().iter().map(|s| s.id.clone()).collect();
    let m = FeatureMatrix::new(d, values, labels, ids, spec.name.clone())?;
    let per_image_s = if n > 0 { total_s / n as f64 } else { 0.0 };
    Ok((m, ExtractionTiming { total_s, per_image_s }))
}
