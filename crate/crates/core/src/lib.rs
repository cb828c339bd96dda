//! COVID-19 chest X-ray and CT classification from frozen CNN features.
//!
//! Images are conditioned ([`preprocess`]), turned into feature vectors by a
//! pretrained network ([`extract`]), and classified by one of six tree
//! learners ([`ensemble`]). [`eval`] cross-validates a learner and
//! [`experiment`] runs and reports the whole extractor x classifier grid.

pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod extract;
pub mod preprocess;
pub mod synthetic;
pub mod tree;

pub use data::{dataset_from_manifest, Dataset, FeatureMatrix, ImageTensor, Label, Modality, Sample};
pub use ensemble::{
    model_load, model_save, predict, predict_proba, train, ClassifierKind, EnsembleConfig,
    TrainedModel,
};
pub use error::{Error, Result};
pub use eval::{
    confusion, cross_validate, metrics, stratified_kfold, time_block, ConfusionCounts, FoldPlan,
    Metric, MetricSummary,
};
pub use extract::{extract_features, registry_get, registry_list, ExtractorBackend, ExtractorSpec};
pub use preprocess::{preprocess_pipeline, PreprocessConfig};
