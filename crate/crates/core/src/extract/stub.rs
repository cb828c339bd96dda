use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ExtractInput, ExtractorBackend, STUB_EXTRACTOR};
use crate::data::{ImageTensor, Label};
use crate::error::{Error, Result};

pub const DEFAULT_STUB_DIM: usize = 32;

const GRID: usize = 8;
const POOLED: usize = GRID * GRID * 3;

/// Deterministic test double: average-pools the image to an 8x8x3 grid and
/// applies a pseudorandom projection whose entries are derived from a hash
/// of the seed. Optionally shifts every component by `+shift` for positive
/// and `-shift` for negative sample ids.
#[derive(Debug, Clone)]
pub struct StubBackend {
    dim: usize,
    seed: u64,
    projection: Vec<f32>,
    label_shift: Option<(HashMap<String, Label>, f32)>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl StubBackend {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("stub dimension must be >= 1"));
        }
        let key = [STUB_EXTRACTOR.as_bytes(), &seed.to_le_bytes(), &(dim as u64).to_le_bytes()].concat();
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(&key));
        let scale = 1.0 / (POOLED as f32).sqrt();
        let projection = (0..dim * POOLED)
            .map(|_| rng.gen_range(-1.0f32..1.0) * scale)
            .collect();
        Ok(StubBackend {
            dim,
            seed,
            projection,
            label_shift: None,
        })
    }

    pub fn with_label_shift(mut self, labels: HashMap<String, Label>, shift: f32) -> Self {
        self.label_shift = Some((labels, shift));
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn pool(img: &ImageTensor) -> [f64; POOLED] {
        let (h, w, c) = (img.height(), img.width(), img.channels());
        let span = |g: usize, len: usize| {
            let lo = g * len / GRID;
            let hi = ((g + 1) * len / GRID).max(lo + 1).min(len);
            (lo.min(len - 1), hi)
        };
        let mut out = [0.0; POOLED];
        for gy in 0..GRID {
            let (y0, y1) = span(gy, h);
            for gx in 0..GRID {
                let (x0, x1) = span(gx, w);
                for ch in 0..3 {
                    let src_ch = if c == 1 { 0 } else { ch.min(c - 1) };
                    let mut sum = 0.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            sum += img.at(y, x, src_ch) as f64;
                        }
                    }
                    out[(gy * GRID + gx) * 3 + ch] = sum / ((y1 - y0) * (x1 - x0)) as f64;
                }
            }
        }
        out
    }

    pub fn features(&self, id: &str, img: &ImageTensor) -> Vec<f32> {
        let pooled = Self::pool(img);
        let shift = match &self.label_shift {
            Some((labels, s)) => match labels.get(id) {
                Some(Label::Positive) => *s,
                Some(Label::Negative) => -*s,
                None => 0.0,
            },
            None => 0.0,
        };
        self.projection
            .chunks_exact(POOLED)
            .map(|w| {
                let dot: f64 = w.iter().zip(&pooled).map(|(a, b)| *a as f64 * b).sum();
                dot as f32 + shift
            })
            .collect()
    }
}

impl ExtractorBackend for StubBackend {
    fn name(&self) -> &str {
        STUB_EXTRACTOR
    }

    fn output_dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn run(&mut self, batch: &[ExtractInput<'_>]) -> Result<Vec<Vec<f32>>> {
        batch
            .iter()
            .map(|item| {
                let img = item
                    .image
                    .ok_or_else(|| Error::Backend("stub backend needs pixels".into()))?;
                Ok(self.features(item.id, img))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: f32) -> ImageTensor {
        ImageTensor::from_data(5, 9, 3, (0..135).map(|i| v + (i % 7) as f32).collect()).unwrap()
    }

    #[test]
    fn same_seed_same_features() {
        let mut a = StubBackend::new(16, 3).unwrap();
        let mut b = StubBackend::new(16, 3).unwrap();
        let im = img(1.0);
        let x = ExtractInput { id: "a", image: Some(&im) };
        assert_eq!(a.run(&[x]).unwrap(), b.run(&[x]).unwrap());
        let mut c = StubBackend::new(16, 4).unwrap();
        assert_ne!(a.run(&[x]).unwrap(), c.run(&[x]).unwrap());
        assert_eq!(a.run(&[x]).unwrap()[0].len(), 16);
    }

    #[test]
    fn label_shift_moves_classes_apart() {
        let labels = HashMap::from([("p".to_string(), Label::Positive), ("n".to_string(), Label::Negative)]);
        let b = StubBackend::new(4, 0).unwrap().with_label_shift(labels, 10.0);
        let im = img(0.0);
        let p = b.features("p", &im);
        let n = b.features("n", &im);
        for (a, c) in p.iter().zip(&n) {
            assert!((a - c - 20.0).abs() < 1e-4);
        }
    }

    #[test]
    fn tiny_images_are_pooled() {
        let b = StubBackend::new(3, 0).unwrap();
        let one = ImageTensor::from_data(1, 1, 1, vec![5.0]).unwrap();
        assert!(b.features("x", &one).iter().all(|v| v.is_finite()));
    }
}
