//! Procedural sharp-image source for demos and tests.
//!
//! Dead-leaves style textures: layered random ellipses over a flat base, plus
//! a thin bright bar for hard edges. Entirely seed-driven so dataset synthesis
//! stays reproducible without shipping photographs.

use crate::error::Result;
use crate::image::ImageTensor;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub fn generate_clean(size: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arr = Array3::<f32>::zeros((3, size, size));
    let base: [f64; 3] = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];
    for c in 0..3 {
        arr.index_axis_mut(ndarray::Axis(0), c).fill(base[c] as f32);
    }

    let shapes = 30 + size / 8;
    for _ in 0..shapes {
        let cx = rng.gen_range(0.0..size as f64);
        let cy = rng.gen_range(0.0..size as f64);
        let a = rng.gen_range(2.0..size as f64 / 3.0);
        let b = rng.gen_range(2.0..size as f64 / 3.0);
        let th = rng.gen_range(0.0..std::f64::consts::PI);
        let col: [f64; 3] = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let (ct, st) = (th.cos(), th.sin());
        for y in 0..size {
            for x in 0..size {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let u = (dx * ct + dy * st) / a;
                let v = (-dx * st + dy * ct) / b;
                if u * u + v * v < 1.0 {
                    for c in 0..3 {
                        arr[[c, y, x]] = col[c] as f32;
                    }
                }
            }
        }
    }

    // one thin bar per image gives a guaranteed sharp edge
    let row = rng.gen_range(0..size);
    let lum = rng.gen_range(0.7..1.0);
    for x in 0..size {
        for c in 0..3 {
            arr[[c, row, x]] = lum;
        }
    }

    ImageTensor::new(arr).expect("generated pixels are finite")
}

/// Writes `count` clean PNGs named `clean_NNNN.png` into `dir`.
pub fn write_clean_images(dir: impl AsRef<Path>, count: usize, size: usize, seed: u64) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let img = generate_clean(size, seed.wrapping_mul(0x9e37_79b9).wrapping_add(i as u64));
        let path = dir.join(format!("clean_{i:04}.png"));
        img.save_png(&path)?;
        paths.push(path);
    }
    Ok(paths)
}
