//! Floating-point RGB image tensor, the common currency of every stage.

use crate::error::{Error, Result};
use ndarray::{Array3, ArrayView3};
use std::path::Path;

/// 3-channel image with values in `[0, 1]`, stored channels-first `(3, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pixels: Array3<f32>,
}

impl ImageTensor {
    /// Wraps a `(3, H, W)` array. Values must be finite; they are clamped to
    /// `[0, 1]` on the way in so that synthesis stages can hand over raw
    /// convolution output.
    pub fn new(mut pixels: Array3<f32>) -> Result<Self> {
        if pixels.shape()[0] != 3 {
            return Err(Error::InvalidImage(format!(
                "expected 3 channels, got {}",
                pixels.shape()[0]
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidImage("non-finite pixel value".into()));
        }
        pixels.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Ok(Self { pixels })
    }

    /// Wraps an array that is already known to be valid (e.g. network output
    /// that the caller wants clipped).
    pub fn from_network_output(pixels: Array3<f32>) -> Result<Self> {
        Self::new(pixels)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { pixels: Array3::zeros((3, height, width)) }
    }

    pub fn view(&self) -> ArrayView3<'_, f32> {
        self.pixels.view()
    }

    pub fn array(&self) -> &Array3<f32> {
        &self.pixels
    }

    pub fn into_array(self) -> Array3<f32> {
        self.pixels
    }

    /// `(height, width)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.pixels.shape()[1], self.pixels.shape()[2])
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.pixels.shape() == other.pixels.shape()
    }

    pub fn to_f64(&self) -> Array3<f64> {
        self.pixels.mapv(|v| v as f64)
    }

    /// 8-bit quantization used at every PNG boundary: `round(v * 255)`.
    pub fn to_u8(&self) -> Vec<u8> {
        let (h, w) = self.dims();
        let mut out = Vec::with_capacity(3 * h * w);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    out.push(quantize(self.pixels[[c, y, x]]));
                }
            }
        }
        out
    }

    pub fn from_u8(data: &[u8], height: usize, width: usize) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::InvalidImage(format!(
                "buffer length {} does not match 3x{height}x{width}",
                data.len()
            )));
        }
        let mut pixels = Array3::zeros((3, height, width));
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    pixels[[c, y, x]] = dequantize(data[(y * width + x) * 3 + c]);
                }
            }
        }
        Ok(Self { pixels })
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)?.into_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Self::from_u8(img.as_raw(), h, w)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (h, w) = self.dims();
        let buf: image::RgbImage =
            image::ImageBuffer::from_raw(w as u32, h as u32, self.to_u8())
                .expect("buffer sized from dims");
        buf.save(path)?;
        Ok(())
    }

    /// Copies the `size`×`size` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, size: usize) -> Result<Self> {
        let (h, w) = self.dims();
        if top + size > h || left + size > w {
            return Err(Error::InvalidImage(format!(
                "crop {size}x{size}+{top}+{left} exceeds image {h}x{w}"
            )));
        }
        let view = self
            .pixels
            .slice(ndarray::s![.., top..top + size, left..left + size]);
        Ok(Self { pixels: view.to_owned() })
    }

    /// Snaps every pixel to the 8-bit grid, as a PNG round-trip would.
    pub fn quantized(&self) -> Self {
        Self { pixels: self.pixels.mapv(|v| dequantize(quantize(v))) }
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[inline]
pub fn dequantize(v: u8) -> f32 {
    v as f32 / 255.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn rejects_wrong_channel_count() {
        let arr = Array3::<f32>::zeros((1, 4, 4));
        assert!(ImageTensor::new(arr).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let mut arr = Array3::<f32>::zeros((3, 4, 4));
        arr[[0, 0, 0]] = f32::NAN;
        assert!(ImageTensor::new(arr).is_err());
    }

    #[test]
    fn quantization_round_trip_is_stable() {
        // Once snapped to the 8-bit grid, further round trips are exact.
        let mut arr = Array3::<f32>::zeros((3, 2, 2));
        arr[[0, 0, 0]] = 0.3;
        arr[[1, 1, 1]] = 0.999;
        let img = ImageTensor::new(arr).unwrap().quantized();
        let round = ImageTensor::from_u8(&img.to_u8(), 2, 2).unwrap();
        assert_eq!(img, round);
    }

    #[test]
    fn png_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut arr = Array3::<f32>::zeros((3, 5, 7));
        for (i, v) in arr.iter_mut().enumerate() {
            *v = (i % 256) as f32 / 255.0;
        }
        let img = ImageTensor::new(arr).unwrap();
        img.save_png(&path).unwrap();
        let loaded = ImageTensor::load_png(&path).unwrap();
        assert_eq!(img.quantized(), loaded);
        assert!(loaded.view().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
