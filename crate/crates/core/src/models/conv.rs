//! 2-D convolution layer (reflect padding) with explicit forward/backward.
//!
//! Forward lowers to GEMM via im2col; backward reuses the stored column
//! matrix for the weight gradient and runs the transposed GEMM + col2im for
//! the input gradient.

use crate::error::{Error, Result};
use crate::models::ops::{col2im, im2col, reflect_pad, reflect_pad_backward};
use crate::scalar::Scalar;
use ndarray::{Array1, Array2, Array3, Array4, ArrayView3};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Conv2d<S: Scalar> {
    /// `(c_out, c_in, k, k)`
    pub weight: Array4<S>,
    pub bias: Array1<S>,
    pub stride: usize,
}

#[derive(Debug)]
pub struct ConvTrace<S: Scalar> {
    col: Array2<S>,
    in_dims: (usize, usize, usize),
    out_dims: (usize, usize),
}

impl<S: Scalar> Conv2d<S> {
    /// Uniform fan-in init for hidden layers: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn init(c_in: usize, c_out: usize, k: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let fan_in = (c_in * k * k) as f64;
        let bound = (1.0 / fan_in).sqrt();
        let mut weight = Array4::zeros((c_out, c_in, k, k));
        for v in weight.iter_mut() {
            *v = S::from_f64(rng.gen_range(-bound..bound));
        }
        Self { weight, bias: Array1::zeros(c_out), stride }
    }

    /// Zero init for the final layer of each module (identity at init).
    pub fn zeros(c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        Self {
            weight: Array4::zeros((c_out, c_in, k, k)),
            bias: Array1::zeros(c_out),
            stride,
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check_input(&self, x: &ArrayView3<S>) -> Result<(usize, usize)> {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if c != self.c_in() {
            return Err(Error::shape(format!("{} channels", self.c_in()), format!("{c} channels")));
        }
        let min = self.kernel_size() / 2 + 1;
        if h < min || w < min {
            return Err(Error::shape(format!("at least {min}x{min}"), format!("{h}x{w}")));
        }
        if self.stride == 2 && (h % 2 != 0 || w % 2 != 0) {
            return Err(Error::shape("even spatial dims for stride 2", format!("{h}x{w}")));
        }
        Ok((h, w))
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel_size();
        let p = k / 2;
        (((h + 2 * p - k) / self.stride) + 1, ((w + 2 * p - k) / self.stride) + 1)
    }

    pub fn forward(&self, x: &ArrayView3<S>) -> Result<Array3<S>> {
        Ok(self.forward_traced(x)?.0)
    }

    pub fn forward_traced(&self, x: &ArrayView3<S>) -> Result<(Array3<S>, ConvTrace<S>)> {
        let (h, w) = self.check_input(x)?;
        let k = self.kernel_size();
        let p = k / 2;
        let (ho, wo) = self.out_dims(h, w);
        let padded = reflect_pad(x, p);
        let col = im2col(&padded, k, self.stride, ho, wo);

        let (c_out, c_in) = (self.c_out(), self.c_in());
        let ckk = c_in * k * k;
        let n = ho * wo;
        let mut out = Array3::<S>::zeros((c_out, ho, wo));
        {
            let a = self.weight.as_slice().expect("contiguous weight");
            let b = col.as_slice().expect("contiguous col");
            let c = out.as_slice_mut().expect("contiguous out");
            S::gemm(
                c_out, ckk, n,
                S::one(),
                a, ckk as isize, 1,
                b, n as isize, 1,
                S::zero(),
                c, n as isize, 1,
            );
        }
        for (co, mut plane) in out.outer_iter_mut().enumerate() {
            let b = self.bias[co];
            plane.mapv_inplace(|v| v + b);
        }
        Ok((out, ConvTrace { col, in_dims: (c_in, h, w), out_dims: (ho, wo) }))
    }

    /// Backpropagates `dy`. Accumulates parameter gradients into `grads`
    /// when given; returns the input gradient when `want_dx` is set.
    pub fn backward(
        &self,
        trace: &ConvTrace<S>,
        dy: &Array3<S>,
        grads: Option<&mut Conv2d<S>>,
        want_dx: bool,
    ) -> Option<Array3<S>> {
        let (c_in, h, w) = trace.in_dims;
        let (ho, wo) = trace.out_dims;
        let k = self.kernel_size();
        let p = k / 2;
        let ckk = c_in * k * k;
        let n = ho * wo;
        let (c_out, _) = (self.c_out(), ());
        debug_assert_eq!(dy.shape(), &[c_out, ho, wo]);
        let dy_slice = dy.as_slice().expect("contiguous dy");

        if let Some(g) = grads {
            // dW(c_out, ckk) += dY(c_out, n) * col(ckk, n)^T
            let col = trace.col.as_slice().expect("contiguous col");
            let gw = g.weight.as_slice_mut().expect("contiguous grad weight");
            S::gemm(
                c_out, n, ckk,
                S::one(),
                dy_slice, n as isize, 1,
                col, 1, n as isize,
                S::one(),
                gw, ckk as isize, 1,
            );
            for (co, plane) in dy.outer_iter().enumerate() {
                g.bias[co] = g.bias[co] + plane.iter().copied().sum::<S>();
            }
        }

        if !want_dx {
            return None;
        }
        // dcol(ckk, n) = W(c_out, ckk)^T * dY(c_out, n)
        let mut dcol = Array2::<S>::zeros((ckk, n));
        {
            let a = self.weight.as_slice().expect("contiguous weight");
            let c = dcol.as_slice_mut().expect("contiguous dcol");
            S::gemm(
                ckk, c_out, n,
                S::one(),
                a, 1, ckk as isize,
                dy_slice, n as isize, 1,
                S::zero(),
                c, n as isize, 1,
            );
        }
        let dpadded = col2im(&dcol, c_in, h + 2 * p, w + 2 * p, k, self.stride, ho, wo);
        Some(reflect_pad_backward(&dpadded, p, h, w))
    }

    pub fn cast<T: Scalar>(&self) -> Conv2d<T> {
        Conv2d {
            weight: self.weight.mapv(|v| T::from_f64(Scalar::as_f64(v))),
            bias: self.bias.mapv(|v| T::from_f64(Scalar::as_f64(v))),
            stride: self.stride,
        }
    }
}
