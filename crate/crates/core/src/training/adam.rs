//! Adam optimizer over a network's parameter tensors.

use crate::models::module::Network;
use crate::scalar::Scalar;
use std::marker::PhantomData;

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// Moment buffers reuse the network type itself, so the optimizer state is
/// structurally aligned with the module it updates.
#[derive(Debug, Clone)]
pub struct Adam<S: Scalar, N: Network<S>> {
    m: N,
    v: N,
    t: u64,
    _marker: PhantomData<S>,
}

impl<S: Scalar, N: Network<S>> Adam<S, N> {
    pub fn new(net: &N) -> Self {
        Self { m: net.zeros_like(), v: net.zeros_like(), t: 0, _marker: PhantomData }
    }

    pub fn from_state(m: N, v: N, t: u64) -> Self {
        Self { m, v, t, _marker: PhantomData }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &N {
        &self.m
    }

    pub fn second_moment(&self) -> &N {
        &self.v
    }

    /// One bias-corrected update: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut N, grads: &N, lr: f64) {
        self.t += 1;
        let b1 = S::from_f64(DEFAULT_BETA1);
        let b2 = S::from_f64(DEFAULT_BETA2);
        let one_m_b1 = S::from_f64(1.0 - DEFAULT_BETA1);
        let one_m_b2 = S::from_f64(1.0 - DEFAULT_BETA2);
        let bc1 = S::from_f64(1.0 / (1.0 - DEFAULT_BETA1.powi(self.t as i32)));
        let bc2 = S::from_f64(1.0 / (1.0 - DEFAULT_BETA2.powi(self.t as i32)));
        let eps = S::from_f64(DEFAULT_EPS);
        let lr = S::from_f64(lr);

        let g_convs = grads.convs();
        let mut p_convs = params.convs_mut();
        let mut m_convs = self.m.convs_mut();
        let mut v_convs = self.v.convs_mut();
        for i in 0..g_convs.len() {
            let update = |p: &mut S, g: &S, m: &mut S, v: &mut S| {
                *m = b1 * *m + one_m_b1 * *g;
                *v = b2 * *v + one_m_b2 * *g * *g;
                let m_hat = *m * bc1;
                let v_hat = *v * bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            };
            for (((p, g), m), v) in p_convs[i]
                .weight
                .iter_mut()
                .zip(g_convs[i].weight.iter())
                .zip(m_convs[i].weight.iter_mut())
                .zip(v_convs[i].weight.iter_mut())
            {
                update(p, g, m, v);
            }
            for (((p, g), m), v) in p_convs[i]
                .bias
                .iter_mut()
                .zip(g_convs[i].bias.iter())
                .zip(m_convs[i].bias.iter_mut())
                .zip(v_convs[i].bias.iter_mut())
            {
                update(p, g, m, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::reblur::{ReblurConfig, ReblurNet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ReblurConfig { channels: 4, num_resblocks: 1, conv_kernel: 3 };
        let mut net = ReblurNet::<f32>::init(&cfg, &mut rng).unwrap();
        let before = crate::models::module::param_hash(&net);
        let mut grads = net.zeros_like();
        for c in grads.convs_mut() {
            c.weight.fill(0.5);
        }
        let mut adam = Adam::new(&net);
        adam.step(&mut net, &grads, 0.0);
        assert_eq!(before, crate::models::module::param_hash(&net));
    }

    #[test]
    fn first_step_moves_by_lr_in_gradient_sign() {
        // With bias correction, the very first Adam step is ~lr * sign(g).
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = ReblurConfig { channels: 4, num_resblocks: 1, conv_kernel: 3 };
        let mut net = ReblurNet::<f64>::init(&cfg, &mut rng).unwrap();
        let w0 = net.stem.weight[[0, 0, 0, 0]];
        let mut grads = net.zeros_like();
        grads.stem.weight[[0, 0, 0, 0]] = 2.5;
        let mut adam = Adam::new(&net);
        adam.step(&mut net, &grads, 1e-3);
        let moved = w0 - net.stem.weight[[0, 0, 0, 0]];
        assert!((moved - 1e-3).abs() < 1e-6, "moved {moved}");
    }
}
