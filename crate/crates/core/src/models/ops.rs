//! Shared tensor primitives for the network layers: reflect padding, im2col,
//! ReLU, and nearest-neighbor upsampling, each with its adjoint.

use crate::data::kernel::reflect_index;
use crate::scalar::Scalar;
use ndarray::{Array2, Array3, ArrayView3};

pub fn reflect_pad<S: Scalar>(x: &ArrayView3<S>, p: usize) -> Array3<S> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Array3::zeros((c, h + 2 * p, w + 2 * p));
    for ci in 0..c {
        for y in 0..h + 2 * p {
            let sy = reflect_index(y as isize - p as isize, h);
            for xq in 0..w + 2 * p {
                let sx = reflect_index(xq as isize - p as isize, w);
                out[[ci, y, xq]] = x[[ci, sy, sx]];
            }
        }
    }
    out
}

/// Adjoint of `reflect_pad`: folds padded-gradient mass back onto the mirrored
/// source pixels.
pub fn reflect_pad_backward<S: Scalar>(dpadded: &Array3<S>, p: usize, h: usize, w: usize) -> Array3<S> {
    let c = dpadded.shape()[0];
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h + 2 * p {
            let sy = reflect_index(y as isize - p as isize, h);
            for xq in 0..w + 2 * p {
                let sx = reflect_index(xq as isize - p as isize, w);
                out[[ci, sy, sx]] = out[[ci, sy, sx]] + dpadded[[ci, y, xq]];
            }
        }
    }
    out
}

/// Unfolds `k`x`k` patches of the padded input into a `(c*k*k, ho*wo)` matrix.
pub fn im2col<S: Scalar>(padded: &Array3<S>, k: usize, stride: usize, ho: usize, wo: usize) -> Array2<S> {
    let (c, _hp, wp) = (padded.shape()[0], padded.shape()[1], padded.shape()[2]);
    let src = padded.as_slice().expect("padded input is contiguous");
    let mut col = Array2::<S>::zeros((c * k * k, ho * wo));
    {
        let dst = col.as_slice_mut().expect("freshly allocated");
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * (ho * wo);
                    for oy in 0..ho {
                        let src_base = ci * padded.shape()[1] * wp + (oy * stride + ky) * wp + kx;
                        let dst_base = row + oy * wo;
                        if stride == 1 {
                            dst[dst_base..dst_base + wo]
                                .copy_from_slice(&src[src_base..src_base + wo]);
                        } else {
                            for ox in 0..wo {
                                dst[dst_base + ox] = src[src_base + ox * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of `im2col`: scatter-adds column gradients into padded-image shape.
pub fn col2im<S: Scalar>(
    dcol: &Array2<S>,
    c: usize,
    hp: usize,
    wp: usize,
    k: usize,
    stride: usize,
    ho: usize,
    wo: usize,
) -> Array3<S> {
    let mut out = Array3::<S>::zeros((c, hp, wp));
    let dst = out.as_slice_mut().expect("freshly allocated");
    let src = dcol.as_slice().expect("contiguous");
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * (ho * wo);
                for oy in 0..ho {
                    let dst_base = ci * hp * wp + (oy * stride + ky) * wp + kx;
                    let src_base = row + oy * wo;
                    if stride == 1 {
                        for ox in 0..wo {
                            dst[dst_base + ox] = dst[dst_base + ox] + src[src_base + ox];
                        }
                    } else {
                        for ox in 0..wo {
                            let d = dst_base + ox * stride;
                            dst[d] = dst[d] + src[src_base + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// ReLU that returns the activation mask for the backward pass.
pub fn relu<S: Scalar>(x: &mut Array3<S>) -> Array3<bool> {
    let mask = x.mapv(|v| v > S::zero());
    x.zip_mut_with(&mask, |v, &m| {
        if !m {
            *v = S::zero();
        }
    });
    mask
}

pub fn relu_backward<S: Scalar>(dy: &mut Array3<S>, mask: &Array3<bool>) {
    dy.zip_mut_with(mask, |v, &m| {
        if !m {
            *v = S::zero();
        }
    });
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2<S: Scalar>(x: &ArrayView3<S>) -> Array3<S> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Array3::zeros((c, h * 2, w * 2));
    for ci in 0..c {
        for y in 0..h {
            for xq in 0..w {
                let v = x[[ci, y, xq]];
                out[[ci, 2 * y, 2 * xq]] = v;
                out[[ci, 2 * y, 2 * xq + 1]] = v;
                out[[ci, 2 * y + 1, 2 * xq]] = v;
                out[[ci, 2 * y + 1, 2 * xq + 1]] = v;
            }
        }
    }
    out
}

/// Adjoint of `upsample2`: sums each 2x2 block.
pub fn upsample2_backward<S: Scalar>(dy: &Array3<S>) -> Array3<S> {
    let (c, h2, w2) = (dy.shape()[0], dy.shape()[1], dy.shape()[2]);
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for xq in 0..w {
                out[[ci, y, xq]] = dy[[ci, 2 * y, 2 * xq]]
                    + dy[[ci, 2 * y, 2 * xq + 1]]
                    + dy[[ci, 2 * y + 1, 2 * xq]]
                    + dy[[ci, 2 * y + 1, 2 * xq + 1]];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn pad_and_fold_are_adjoint() {
        // <pad(x), y> == <x, fold(y)> for random x, y
        let mut x = Array3::<f64>::zeros((2, 4, 5));
        for (i, v) in x.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        let p = 2;
        let padded = reflect_pad(&x.view(), p);
        let mut y = Array3::<f64>::zeros(padded.raw_dim());
        for (i, v) in y.iter_mut().enumerate() {
            *v = (i as f64 * 0.11).cos();
        }
        let lhs: f64 = padded.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let folded = reflect_pad_backward(&y, p, 4, 5);
        let rhs: f64 = x.iter().zip(folded.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn upsample_and_downsum_are_adjoint() {
        let mut x = Array3::<f64>::zeros((1, 3, 3));
        for (i, v) in x.iter_mut().enumerate() {
            *v = i as f64 + 1.0;
        }
        let up = upsample2(&x.view());
        let mut y = Array3::<f64>::zeros(up.raw_dim());
        for (i, v) in y.iter_mut().enumerate() {
            *v = (i as f64 * 0.23).sin();
        }
        let lhs: f64 = up.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let down = upsample2_backward(&y);
        let rhs: f64 = x.iter().zip(down.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn im2col_col2im_adjoint() {
        let mut x = Array3::<f64>::zeros((2, 6, 6));
        for (i, v) in x.iter_mut().enumerate() {
            *v = (i as f64 * 0.71).sin();
        }
        for stride in [1usize, 2] {
            let k = 3;
            let ho = (6 - k) / stride + 1;
            let wo = ho;
            let col = im2col(&x, k, stride, ho, wo);
            let mut g = Array2::<f64>::zeros(col.raw_dim());
            for (i, v) in g.iter_mut().enumerate() {
                *v = (i as f64 * 0.13).cos();
            }
            let lhs: f64 = col.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
            let back = col2im(&g, 2, 6, 6, k, stride, ho, wo);
            let rhs: f64 = x.iter().zip(back.iter()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12, "stride {stride}");
        }
    }

    use ndarray::Array2;
}
