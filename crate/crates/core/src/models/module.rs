//! Common interface over the two trainable modules.

use crate::error::Result;
use crate::models::conv::Conv2d;
use crate::scalar::Scalar;
use ndarray::{Array3, ArrayView3};
use sha2::{Digest, Sha256};

/// A differentiable image-to-image module: forward evaluation, manual
/// backward, and uniform access to the named parameter tensors.
///
/// A network value doubles as the gradient container for its own parameters
/// (`zeros_like` + `backward` accumulation), which keeps optimizer state and
/// gradient buffers structurally aligned with the module.
pub trait Network<S: Scalar>: Clone {
    type Trace;

    fn forward(&self, x: &ArrayView3<S>) -> Result<Array3<S>>;

    fn forward_traced(&self, x: &ArrayView3<S>) -> Result<(Array3<S>, Self::Trace)>;

    /// Backpropagates `dy` through the recorded forward. Parameter gradients
    /// are accumulated into `grads` when provided; the input gradient is
    /// returned when `want_dx` is set (the global residual path included).
    fn backward(
        &self,
        trace: &Self::Trace,
        dy: &Array3<S>,
        grads: Option<&mut Self>,
        want_dx: bool,
    ) -> Option<Array3<S>>;

    fn zeros_like(&self) -> Self;

    /// Convolution layers in a fixed order; all parameters live here.
    fn convs(&self) -> Vec<&Conv2d<S>>;

    fn convs_mut(&mut self) -> Vec<&mut Conv2d<S>>;

    /// Stable names aligned with `convs()`.
    fn conv_names(&self) -> Vec<String>;

    fn param_count(&self) -> usize {
        self.convs().iter().map(|c| c.param_count()).sum()
    }
}

/// Applies `f` to every aligned (destination, source) parameter pair.
pub fn zip_params_mut<S: Scalar, N: Network<S>>(dst: &mut N, src: &N, mut f: impl FnMut(&mut S, &S)) {
    let src_convs = src.convs();
    for (d, s) in dst.convs_mut().into_iter().zip(src_convs) {
        for (dv, sv) in d.weight.iter_mut().zip(s.weight.iter()) {
            f(dv, sv);
        }
        for (dv, sv) in d.bias.iter_mut().zip(s.bias.iter()) {
            f(dv, sv);
        }
    }
}

/// dst += alpha * src, over all parameters.
pub fn axpy_params<S: Scalar, N: Network<S>>(dst: &mut N, alpha: S, src: &N) {
    zip_params_mut(dst, src, |d, s| *d = *d + alpha * *s);
}

pub fn scale_params<S: Scalar, N: Network<S>>(net: &mut N, alpha: S) {
    let zero = net.zeros_like();
    zip_params_mut(net, &zero, |d, _| *d = *d * alpha);
}

pub fn max_abs_param<S: Scalar, N: Network<S>>(net: &N) -> f64 {
    net.convs()
        .iter()
        .flat_map(|c| c.weight.iter().chain(c.bias.iter()))
        .fold(0.0, |m, v| m.max(Scalar::as_f64(*v).abs()))
}

/// SHA-256 over every parameter tensor (names + little-endian bytes); used to
/// assert that frozen modules stay bit-identical.
pub fn param_hash<S: Scalar, N: Network<S>>(net: &N) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for (name, conv) in net.conv_names().into_iter().zip(net.convs()) {
        hasher.update(name.as_bytes());
        for v in conv.weight.iter().chain(conv.bias.iter()) {
            hasher.update(Scalar::as_f64(*v).to_le_bytes());
        }
    }
    hasher.finalize().into()
}
