use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tract_onnx::prelude::*;

use super::{ExtractInput, ExtractorBackend, ExtractorSpec};
use crate::error::{Error, Result};

/// Memory layout of the network's image input (and of its 4-D output).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorLayout {
    /// Channels first, as exported by PyTorch.
    Nchw,
    /// Channels last, as exported from Keras through tf2onnx.
    Nhwc,
}

type Plan = TypedRunnableModel<TypedModel>;

fn backend_err(e: impl std::fmt::Display) -> Error {
    Error::Backend(format!("{e:#}"))
}

/// Runs an ONNX network and global-average-pools a 4-D output into one
/// vector per image. Rank-2 outputs are used as they are.
pub struct OnnxBackend {
    name: String,
    path: PathBuf,
    layout: TensorLayout,
    input_height: usize,
    input_width: usize,
    model: InferenceModel,
    plans: HashMap<usize, Plan>,
    output_dim: Option<usize>,
}

impl OnnxBackend {
    pub fn load(path: &Path, spec: &ExtractorSpec, layout: TensorLayout) -> Result<Self> {
        if !path.exists() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "model file not found"),
            ));
        }
        let model = tract_onnx::onnx().model_for_path(path).map_err(backend_err)?;
        let mut backend = OnnxBackend {
            name: spec.name.clone(),
            path: path.to_path_buf(),
            layout,
            input_height: spec.input_height,
            input_width: spec.input_width,
            model,
            plans: HashMap::new(),
            output_dim: None,
        };
        backend.output_dim = Some(backend.probe_output_dim()?);
        Ok(backend)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn input_shape(&self, batch: usize) -> [usize; 4] {
        let (h, w) = (self.input_height, self.input_width);
        match self.layout {
            TensorLayout::Nchw => [batch, 3, h, w],
            TensorLayout::Nhwc => [batch, h, w, 3],
        }
    }

    fn plan(&mut self, batch: usize) -> Result<&Plan> {
        if !self.plans.contains_key(&batch) {
            let plan = self
                .model
                .clone()
                .with_input_fact(0, f32::fact(self.input_shape(batch)).into())
                .and_then(|m| m.into_optimized())
                .and_then(|m| m.into_runnable())
                .map_err(backend_err)?;
            self.plans.insert(batch, plan);
        }
        Ok(&self.plans[&batch])
    }

    fn probe_output_dim(&mut self) -> Result<usize> {
        let plan = self.plan(1)?;
        let fact = plan.model().output_fact(0).map_err(backend_err)?;
        let shape = fact
            .shape
            .as_concrete()
            .ok_or_else(|| Error::Backend("output shape is not concrete".into()))?
            .to_vec();
        let dim = match (shape.len(), self.layout) {
            (4, TensorLayout::Nchw) => shape[1],
            (4, TensorLayout::Nhwc) => shape[3],
            _ => shape.iter().skip(1).product(),
        };
        if dim == 0 {
            return Err(Error::Backend(format!("empty output shape {shape:?}")));
        }
        Ok(dim)
    }
}

impl ExtractorBackend for OnnxBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn output_dim(&self) -> Option<usize> {
        self.output_dim
    }

    fn run(&mut self, batch: &[ExtractInput<'_>]) -> Result<Vec<Vec<f32>>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let (h, w) = (self.input_height, self.input_width);
        let shape = self.input_shape(batch.len());
        let mut data = Vec::with_capacity(shape.iter().product());
        for item in batch {
            let img = item
                .image
                .ok_or_else(|| Error::Backend("onnx backend needs pixels".into()))?;
            if (img.height(), img.width(), img.channels()) != (h, w, 3) {
                return Err(Error::Backend(format!(
                    "sample {}: expected {h}x{w}x3 input, got {}x{}x{}",
                    item.id,
                    img.height(),
                    img.width(),
                    img.channels()
                )));
            }
            match self.layout {
                TensorLayout::Nhwc => data.extend_from_slice(img.data()),
                TensorLayout::Nchw => {
                    for c in 0..3 {
                        data.extend(img.data().iter().skip(c).step_by(3));
                    }
                }
            }
        }
        let layout = self.layout;
        let input = Tensor::from_shape(&shape, &data).map_err(backend_err)?;
        let plan = self.plan(batch.len())?;
        let out = plan.run(tvec!(input.into())).map_err(backend_err)?;
        let view = out[0].to_array_view::<f32>().map_err(backend_err)?;
        let dims = view.shape().to_vec();
        if dims.first() != Some(&batch.len()) {
            return Err(Error::Backend(format!("unexpected output shape {dims:?}")));
        }
        let per_item: usize = dims[1..].iter().product();
        let flat: Vec<f32> = view.iter().copied().collect();
        let rows = flat.chunks_exact(per_item.max(1)).map(|item| {
            if dims.len() != 4 {
                return item.to_vec();
            }
            let (channels, spatial) = match layout {
                TensorLayout::Nchw => (dims[1], dims[2] * dims[3]),
                TensorLayout::Nhwc => (dims[3], dims[1] * dims[2]),
            };
            let mut sums = vec![0.0f64; channels];
            for s in 0..spatial {
                for (c, sum) in sums.iter_mut().enumerate() {
                    let v = match layout {
                        TensorLayout::Nchw => item[c * spatial + s],
                        TensorLayout::Nhwc => item[s * channels + c],
                    };
                    *sum += v as f64;
                }
            }
            sums.into_iter().map(|s| (s / spatial as f64) as f32).collect()
        });
        Ok(rows.collect())
    }
}
