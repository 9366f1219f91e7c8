//! Motion-blur kernels and their application to images.

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use ndarray::{Array2, Array3};

pub const KERNEL_SUM_TOL: f64 = 1e-6;

/// Normalized nonnegative 2-D blur kernel with odd side length.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    weights: Array2<f64>,
}

impl BlurKernel {
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        let (h, w) = (weights.shape()[0], weights.shape()[1]);
        if h != w || h % 2 == 0 {
            return Err(Error::InvalidKernel(format!("expected odd square kernel, got {h}x{w}")));
        }
        if weights.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidKernel("negative or non-finite weight".into()));
        }
        let sum: f64 = weights.sum();
        if (sum - 1.0).abs() > KERNEL_SUM_TOL {
            return Err(Error::InvalidKernel(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self { weights })
    }

    /// Builds from raw nonnegative weights, normalizing the sum to 1.
    pub fn normalized(weights: Array2<f64>) -> Result<Self> {
        let sum: f64 = weights.sum();
        if sum <= 0.0 || !sum.is_finite() {
            return Err(Error::InvalidKernel(format!("cannot normalize weight sum {sum}")));
        }
        Self::new(weights / sum)
    }

    pub fn delta(size: usize) -> Result<Self> {
        if size % 2 == 0 {
            return Err(Error::InvalidKernel(format!("kernel size {size} must be odd")));
        }
        let mut w = Array2::zeros((size, size));
        w[[size / 2, size / 2]] = 1.0;
        Self::new(w)
    }

    pub fn size(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn radius(&self) -> usize {
        self.size() / 2
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// Writes the kernel as a magnified grayscale PNG (peak scaled to white).
    pub fn save_png_magnified(&self, path: impl AsRef<std::path::Path>, scale: usize) -> Result<()> {
        let n = self.size();
        let peak = self.weights.iter().cloned().fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
        let side = (n * scale) as u32;
        let img = image::GrayImage::from_fn(side, side, |x, y| {
            let v = self.weights[[y as usize / scale, x as usize / scale]] / peak;
            image::Luma([(v * 255.0).round() as u8])
        });
        img.save(path.as_ref())?;
        Ok(())
    }
}

/// Rasterizes a centered line segment of the given length (pixels) and angle
/// (radians) into an odd `size`×`size` kernel. Each crossed pixel cell is
/// weighted by the arc length inside it, so e.g. a 3-pixel horizontal segment
/// puts exactly 1/3 on each of the three center pixels.
pub fn make_motion_kernel(length: f64, angle: f64, size: usize) -> Result<BlurKernel> {
    if size % 2 == 0 {
        return Err(Error::InvalidKernel(format!("kernel size {size} must be odd")));
    }
    if !(0.0..=size as f64).contains(&length) {
        return Err(Error::InvalidKernel(format!(
            "length {length} outside [0, {size}]"
        )));
    }
    if length == 0.0 {
        return BlurKernel::delta(size);
    }

    let c = (size as f64 - 1.0) / 2.0;
    let (dx, dy) = (angle.cos(), angle.sin());
    let (t0, t1) = (-length / 2.0, length / 2.0);

    // Breakpoints where the segment crosses a pixel-cell boundary in x or y.
    let mut ts = vec![t0, t1];
    for (dir, center) in [(dx, c), (dy, c)] {
        if dir.abs() > 1e-12 {
            // boundaries live at integer+0.5 offsets from the pixel grid
            let lo = (center + t0.min(t1) * dir).min(center + t1.max(t0) * dir);
            let hi = (center + t0.max(t1) * dir).max(center + t1.min(t0) * dir);
            let mut b = lo.floor() - 0.5;
            while b <= hi + 1.0 {
                let t = (b - center) / dir;
                if t > t0 && t < t1 {
                    ts.push(t);
                }
                b += 1.0;
            }
        }
    }
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut weights = Array2::<f64>::zeros((size, size));
    for pair in ts.windows(2) {
        let (ta, tb) = (pair[0], pair[1]);
        let tm = 0.5 * (ta + tb);
        let x = c + tm * dx;
        let y = c + tm * dy;
        let (ix, iy) = (x.round() as isize, y.round() as isize);
        if ix >= 0 && iy >= 0 && (ix as usize) < size && (iy as usize) < size {
            weights[[iy as usize, ix as usize]] += tb - ta;
        }
    }

    // The segment is centered, so the exact kernel is 180-degree symmetric;
    // enforce that to keep the first moment at zero.
    let mut sym = weights.clone();
    for y in 0..size {
        for x in 0..size {
            sym[[y, x]] = 0.5 * (weights[[y, x]] + weights[[size - 1 - y, size - 1 - x]]);
        }
    }
    BlurKernel::normalized(sym)
}

/// Mirror index without repeating the edge sample (`-1 -> 1`, `n -> n-2`).
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    debug_assert!(n > 0);
    let period = (2 * n - 2).max(1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Per-channel correlation with reflect padding; output clipped to `[0, 1]`.
pub fn apply_blur(image: &ImageTensor, kernel: &BlurKernel) -> Result<ImageTensor> {
    let (h, w) = image.dims();
    let r = kernel.radius();
    if r >= h || r >= w {
        return Err(Error::shape(
            format!("image at least {}x{}", r + 1, r + 1),
            format!("{h}x{w}"),
        ));
    }
    let src = image.view();
    let kw = kernel.weights();
    let size = kernel.size();
    let mut out = Array3::<f32>::zeros((3, h, w));
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0_f64;
                for ky in 0..size {
                    let sy = reflect_index(y as isize + ky as isize - r as isize, h);
                    for kx in 0..size {
                        let sx = reflect_index(x as isize + kx as isize - r as isize, w);
                        acc += kw[[ky, kx]] * src[[ch, sy, sx]] as f64;
                    }
                }
                out[[ch, y, x]] = acc as f32;
            }
        }
    }
    ImageTensor::new(out)
}
