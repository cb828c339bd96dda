//! Separable two-class Gaussian data used to exercise the classifiers
//! without any image or model files.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{FeatureMatrix, Label};
use crate::extract::STUB_EXTRACTOR;

pub const REFERENCE_DIM: usize = 16;
pub const REFERENCE_PER_CLASS: usize = 100;
/// Distance between the class means along feature 0, in units of sigma.
pub const REFERENCE_SEPARATION: f64 = 6.0;

/// Two isotropic unit-variance Gaussians in `d` dimensions whose means sit
/// at `-separation/2` and `+separation/2` on feature 0 and at 0 elsewhere.
/// Rows alternate negative, positive.
pub fn gaussian_blobs(per_class: usize, d: usize, separation: f64, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let n = 2 * per_class;
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { Label::Negative } else { Label::Positive };
        let shift = match label {
            Label::Negative => -separation / 2.0,
            Label::Positive => separation / 2.0,
        };
        for j in 0..d {
            let v: f64 = noise.sample(&mut rng);
            values.push((v + if j == 0 { shift } else { 0.0 }) as f32);
        }
        labels.push(label);
        ids.push(format!("ref{i:04}"));
    }
    FeatureMatrix::new(d, values, labels, ids, STUB_EXTRACTOR).expect("finite by construction")
}

/// 200 rows, 16 features, 6 sigma apart.
pub fn reference_dataset(seed: u64) -> FeatureMatrix {
    gaussian_blobs(REFERENCE_PER_CLASS, REFERENCE_DIM, REFERENCE_SEPARATION, seed)
}
