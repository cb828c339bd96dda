//! Synthetic chest-image stand-ins for demos and end-to-end tests.
//!
//! Positives carry a bright patch in the upper-left quadrant, negatives in
//! the lower-right, over a dim noisy background. The patch position is
//! jittered per image.

use std::fmt::Write as _;
use std::path::Path;

use covifex_core::{Error, Result};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WIDTH: u32 = 96;
pub const HEIGHT: u32 = 80;

pub fn image(positive: bool, rng: &mut ChaCha8Rng) -> RgbImage {
    let mut img = RgbImage::new(WIDTH, HEIGHT);
    for p in img.pixels_mut() {
        let v = rng.gen_range(10..50u8);
        *p = Rgb([v, v, v]);
    }
    let (bx, by) = if positive { (8, 8) } else { (52, 40) };
    let jx = rng.gen_range(0..12);
    let jy = rng.gen_range(0..10);
    for y in by + jy..by + jy + 24 {
        for x in bx + jx..bx + jx + 28 {
            let v = rng.gen_range(180..250u8);
            img.put_pixel(x, y, Rgb([v, v, v]));
        }
    }
    img
}

/// Writes `2 * per_class` PNGs and `manifest.csv` into `dir`. Returns the
/// manifest path.
pub fn write_dataset(dir: &Path, per_class: usize, seed: u64) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = String::from("id,path,modality,label\n");
    for i in 0..2 * per_class {
        let positive = i % 2 == 1;
        let name = format!("img_{i:04}.png");
        let path = dir.join(&name);
        image(positive, &mut rng)
            .save(&path)
            .map_err(|e| Error::Image {
                id: name.clone(),
                message: e.to_string(),
            })?;
        let modality = if i % 4 < 2 { "xray" } else { "ct" };
        writeln!(manifest, "syn{i:04},{name},{modality},{}", positive as u8).unwrap();
    }
    let mpath = dir.join("manifest.csv");
    std::fs::write(&mpath, manifest).map_err(|e| io(&mpath, e))?;
    Ok(mpath)
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}
