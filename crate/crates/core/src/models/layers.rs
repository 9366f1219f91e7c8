//! Residual building block: conv — ReLU — conv plus identity skip, no
//! normalization layers.

use crate::error::Result;
use crate::models::conv::{Conv2d, ConvTrace};
use crate::models::ops::{relu, relu_backward};
use crate::scalar::Scalar;
use ndarray::{Array3, ArrayView3};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct ResBlock<S: Scalar> {
    pub c1: Conv2d<S>,
    pub c2: Conv2d<S>,
}

pub struct ResBlockTrace<S: Scalar> {
    t1: ConvTrace<S>,
    mask: Array3<bool>,
    t2: ConvTrace<S>,
}

impl<S: Scalar> ResBlock<S> {
    pub fn init(channels: usize, k: usize, rng: &mut impl Rng) -> Self {
        Self {
            c1: Conv2d::init(channels, channels, k, 1, rng),
            c2: Conv2d::init(channels, channels, k, 1, rng),
        }
    }

    pub fn zeros(channels: usize, k: usize) -> Self {
        Self { c1: Conv2d::zeros(channels, channels, k, 1), c2: Conv2d::zeros(channels, channels, k, 1) }
    }

    pub fn forward(&self, x: &ArrayView3<S>) -> Result<Array3<S>> {
        let mut h = self.c1.forward(x)?;
        relu(&mut h);
        let mut y = self.c2.forward(&h.view())?;
        y.zip_mut_with(x, |a, &b| *a = *a + b);
        Ok(y)
    }

    pub fn forward_traced(&self, x: &ArrayView3<S>) -> Result<(Array3<S>, ResBlockTrace<S>)> {
        let (mut h, t1) = self.c1.forward_traced(x)?;
        let mask = relu(&mut h);
        let (mut y, t2) = self.c2.forward_traced(&h.view())?;
        y.zip_mut_with(x, |a, &b| *a = *a + b);
        Ok((y, ResBlockTrace { t1, mask, t2 }))
    }

    /// Returns the input gradient (skip branch included).
    pub fn backward(
        &self,
        trace: &ResBlockTrace<S>,
        dy: &Array3<S>,
        grads: Option<&mut ResBlock<S>>,
    ) -> Array3<S> {
        let (g1, g2) = match grads {
            Some(g) => (Some(&mut g.c1), Some(&mut g.c2)),
            None => (None, None),
        };
        let mut dh = self
            .c2
            .backward(&trace.t2, dy, g2, true)
            .expect("want_dx");
        relu_backward(&mut dh, &trace.mask);
        let mut dx = self
            .c1
            .backward(&trace.t1, &dh, g1, true)
            .expect("want_dx");
        dx.zip_mut_with(dy, |a, &b| *a = *a + b);
        dx
    }

    pub fn param_count(&self) -> usize {
        self.c1.param_count() + self.c2.param_count()
    }

    pub fn cast<T: Scalar>(&self) -> ResBlock<T> {
        ResBlock { c1: self.c1.cast(), c2: self.c2.cast() }
    }
}
