//! Image conditioning: decode, channel adaptation, bilinear resize, min-max
//! intensity normalization and per-channel mean subtraction.
//!
//! Every stage is a pure function of its inputs. The pipeline order is
//! grayscale-to-RGB, resize, min-max to [0, 1], then mean subtraction, so
//! the ImageNet channel means are subtracted from unit-scaled data.

use std::path::Path;

use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::data::ImageTensor;
use crate::error::{Error, Result};

pub const IMAGENET_MEAN_RGB: [f32; 3] = [0.485, 0.456, 0.406];

/// Intermediate size every decoded image is first brought to, as
/// (height, width). Extractor input sizes are reached by a second resize.
pub const CANONICAL_SIZE: (usize, usize) = (450, 600);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub target_height: usize,
    pub target_width: usize,
    /// Optional (height, width) resize applied before the target resize.
    pub canonical_size: Option<(usize, usize)>,
    pub normalize_min_max: bool,
    pub apply_mean_subtraction: bool,
    pub mean_rgb: [f32; 3],
}

impl PreprocessConfig {
    pub fn for_input(target_height: usize, target_width: usize) -> Self {
        PreprocessConfig {
            target_height,
            target_width,
            canonical_size: Some(CANONICAL_SIZE),
            normalize_min_max: true,
            apply_mean_subtraction: true,
            mean_rgb: IMAGENET_MEAN_RGB,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_height == 0 || self.target_width == 0 {
            return Err(Error::invalid("target dimensions must be >= 1"));
        }
        if let Some((h, w)) = self.canonical_size {
            if h == 0 || w == 0 {
                return Err(Error::invalid("canonical dimensions must be >= 1"));
            }
        }
        if self.mean_rgb.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("mean_rgb must be finite"));
        }
        Ok(())
    }
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self::for_input(224, 224)
    }
}

/// Outcome flag for [`min_max_normalize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormalizeStatus {
    Ok,
    /// x_max == x_min; the output is all zeros.
    ConstantImage,
}

/// Decodes PNG/JPEG bytes into a [0, 255] tensor. 16-bit samples are scaled
/// by 1/257; alpha channels are dropped.
pub fn decode_image(bytes: &[u8]) -> Result<ImageTensor> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Format {
        what: "image",
        message: e.to_string(),
    })?;
    from_dynamic(img)
}

pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

fn from_dynamic(img: DynamicImage) -> Result<ImageTensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data): (usize, Vec<f32>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().into_iter().map(f32::from).collect()),
        DynamicImage::ImageLumaA8(_) => {
            let b = img.to_luma8();
            (1, b.into_raw().into_iter().map(f32::from).collect())
        }
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            let b = img.to_luma16();
            (1, b.into_raw().into_iter().map(|v| f32::from(v) / 257.0).collect())
        }
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            let b = img.to_rgb16();
            (3, b.into_raw().into_iter().map(|v| f32::from(v) / 257.0).collect())
        }
        other => {
            let b = other.to_rgb8();
            (3, b.into_raw().into_iter().map(f32::from).collect())
        }
    };
    ImageTensor::new(h, w, channels, data, (0.0, 255.0))
}

/// Source sample positions and weights for one output axis, using the
/// half-pixel-center convention.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn resize_bilinear(img: &ImageTensor, th: usize, tw: usize) -> Result<ImageTensor> {
    if th == 0 || tw == 0 {
        return Err(Error::invalid(format!(
            "target dimensions must be >= 1, got {th}x{tw}"
        )));
    }
    let c = img.channels();
    let rows = axis_taps(img.height(), th);
    let cols = axis_taps(img.width(), tw);
    let mut out = Vec::with_capacity(th * tw * c);
    for &(y0, y1, wy) in &rows {
        for &(x0, x1, wx) in &cols {
            for ch in 0..c {
                let top = (1.0 - wx) * img.at(y0, x0, ch) as f64 + wx * img.at(y0, x1, ch) as f64;
                let bot = (1.0 - wx) * img.at(y1, x0, ch) as f64 + wx * img.at(y1, x1, ch) as f64;
                out.push(((1.0 - wy) * top + wy * bot) as f32);
            }
        }
    }
    ImageTensor::new(th, tw, c, out, img.intensity_range())
}

pub fn grayscale_to_rgb(img: &ImageTensor) -> Result<ImageTensor> {
    match img.channels() {
        3 => Ok(img.clone()),
        1 => {
            let data = img.data().iter().flat_map(|&v| [v, v, v]).collect();
            ImageTensor::new(img.height(), img.width(), 3, data, img.intensity_range())
        }
        n => Err(Error::UnsupportedChannels(n)),
    }
}

/// Rescales the whole image (all channels jointly) so its minimum becomes 0
/// and its maximum 1.
pub fn min_max_normalize(img: &ImageTensor) -> (ImageTensor, NormalizeStatus) {
    let (lo, hi) = img.min_max();
    let (h, w, c) = (img.height(), img.width(), img.channels());
    if !(hi > lo) {
        let zeros = ImageTensor::new(h, w, c, vec![0.0; h * w * c], (0.0, 1.0))
            .expect("shape copied from a valid tensor");
        return (zeros, NormalizeStatus::ConstantImage);
    }
    let (lo, span) = (lo as f64, hi as f64 - lo as f64);
    let data = img
        .data()
        .iter()
        .map(|&v| ((v as f64 - lo) / span) as f32)
        .collect();
    let out = ImageTensor::new(h, w, c, data, (0.0, 1.0)).expect("values lie in [0, 1]");
    (out, NormalizeStatus::Ok)
}

/// Subtracts `mean_rgb[c]` from channel `c`. No clamping.
pub fn mean_subtract(img: &ImageTensor, mean_rgb: [f32; 3]) -> Result<ImageTensor> {
    if img.channels() != 3 {
        return Err(Error::invalid(format!(
            "mean subtraction needs 3 channels, got {} (convert to RGB first)",
            img.channels()
        )));
    }
    let data: Vec<f32> = img
        .data()
        .chunks_exact(3)
        .flat_map(|px| [px[0] - mean_rgb[0], px[1] - mean_rgb[1], px[2] - mean_rgb[2]])
        .collect();
    ImageTensor::from_data(img.height(), img.width(), 3, data)
}

/// Result of the full conditioning pipeline.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub image: ImageTensor,
    pub normalize_status: Option<NormalizeStatus>,
}

pub fn preprocess_pipeline(img: &ImageTensor, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    cfg.validate()?;
    let mut cur = grayscale_to_rgb(img)?;
    if let Some((h, w)) = cfg.canonical_size {
        cur = resize_bilinear(&cur, h, w)?;
    }
    cur = resize_bilinear(&cur, cfg.target_height, cfg.target_width)?;
    let mut normalize_status = None;
    if cfg.normalize_min_max {
        let (norm, status) = min_max_normalize(&cur);
        if status == NormalizeStatus::ConstantImage {
            log::warn!("constant image normalized to zeros");
        }
        cur = norm;
        normalize_status = Some(status);
    }
    if cfg.apply_mean_subtraction {
        cur = mean_subtract(&cur, cfg.mean_rgb)?;
    }
    Ok(Preprocessed {
        image: cur,
        normalize_status,
    })
}
