//! Loss functions for the deblur/reblur pair, with explicit stop-gradient
//! boundaries.
//!
//! Every distance is a mean absolute difference (p = 1) with the subgradient
//! of |x| at 0 taken as 0. Which quantities are held constant differs per
//! loss and per update target, so each loss comes in a value form plus a
//! gradient form whose signature names exactly what the gradient flows into.
//! Gradient functions for losses with frozen inputs also return those frozen
//! gradients as explicit zeros, making the stop-gradient contract assertable.

use crate::error::{Error, Result};
use crate::models::deblur::DeblurNet;
use crate::models::module::Network;
use crate::scalar::Scalar;
use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight on the supervised reblur term in the deblur objective.
    pub lambda_reblur: f64,
    /// Distance exponent; only p = 1 is supported.
    pub distance_p: u8,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_reblur: 1.0, distance_p: 1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_reblur < 0.0 || !self.lambda_reblur.is_finite() {
            return Err(Error::InvalidConfig("lambda_reblur must be >= 0".into()));
        }
        if self.distance_p != 1 {
            return Err(Error::InvalidConfig("distance_p is fixed to 1".into()));
        }
        Ok(())
    }
}

/// Named scalars logged once per training step.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l1: f64,
    pub blur: f64,
    pub sharp: f64,
    pub reblur_sup: f64,
    pub reblur_self: f64,
    pub total_d: f64,
    pub total_r: f64,
}

impl LossReport {
    pub fn csv_header() -> &'static str {
        "step,epoch,l1,blur,sharp,reblur_sup,reblur_self,total_d,total_r"
    }

    pub fn csv_row(&self, step: u64, epoch: u64) -> String {
        format!(
            "{step},{epoch},{},{},{},{},{},{},{}",
            self.l1, self.blur, self.sharp, self.reblur_sup, self.reblur_self, self.total_d, self.total_r
        )
    }

    pub fn all_finite(&self) -> bool {
        [self.l1, self.blur, self.sharp, self.reblur_sup, self.reblur_self, self.total_d, self.total_r]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn check_same_shape<S: Scalar>(a: &ArrayView3<S>, b: &ArrayView3<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok(())
}

/// Mean absolute difference over all elements, accumulated in f64.
pub fn l1_distance<S: Scalar>(a: &ArrayView3<S>, b: &ArrayView3<S>) -> Result<f64> {
    check_same_shape(a, b)?;
    let n = a.len() as f64;
    let sum: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| (Scalar::as_f64(x) - Scalar::as_f64(y)).abs())
        .sum();
    Ok(sum / n)
}

/// L1 value plus its gradient with respect to `a`: `sign(a - b) / N`, with
/// sign(0) = 0.
pub fn l1_grad<S: Scalar>(a: &ArrayView3<S>, b: &ArrayView3<S>) -> Result<(f64, Array3<S>)> {
    check_same_shape(a, b)?;
    let n = a.len() as f64;
    let inv_n = S::from_f64(1.0 / n);
    let mut grad = Array3::<S>::zeros((a.shape()[0], a.shape()[1], a.shape()[2]));
    let mut sum = 0.0_f64;
    for ((ga, &x), &y) in grad.iter_mut().zip(a.iter()).zip(b.iter()) {
        let d = Scalar::as_f64(x) - Scalar::as_f64(y);
        sum += d.abs();
        *ga = if d > 0.0 {
            inv_n
        } else if d < 0.0 {
            -inv_n
        } else {
            S::zero()
        };
    }
    Ok((sum / n, grad))
}

/// Distance between the reblurred candidate and the original blurry image:
/// `l1(M_R(l), b)`.
pub fn blur_reconstruction_loss<S: Scalar, R: Network<S>>(
    reblur: &R,
    l: &ArrayView3<S>,
    b: &ArrayView3<S>,
) -> Result<f64> {
    let rl = reblur.forward(l)?;
    l1_distance(&rl.view(), b)
}

/// Value plus gradients of the blur-reconstruction distance with respect to
/// the reblur parameters and to `l`.
pub fn blur_reconstruction_grads<S: Scalar, R: Network<S>>(
    reblur: &R,
    l: &ArrayView3<S>,
    b: &ArrayView3<S>,
) -> Result<(f64, R, Array3<S>)> {
    let (rl, trace) = reblur.forward_traced(l)?;
    let (value, d_rl) = l1_grad(&rl.view(), b)?;
    let mut grads = reblur.zeros_like();
    let dl = reblur
        .backward(&trace, &d_rl, Some(&mut grads), true)
        .expect("want_dx");
    Ok((value, grads, dl))
}

/// Distance between a reblurred pseudo-sharp image and itself:
/// `l1(M_R(s_hat), s_hat)`. The pseudo-sharp input is a constant here; no
/// gradient flows back into whatever produced it.
pub fn sharpness_preservation_loss<S: Scalar, R: Network<S>>(
    reblur: &R,
    s_hat: &ArrayView3<S>,
) -> Result<f64> {
    blur_reconstruction_loss(reblur, s_hat, s_hat)
}

/// Gradient of the sharpness-preservation term with respect to the reblur
/// parameters only (the pseudo-sharp image is detached on both sides).
pub fn sharpness_preservation_grads<S: Scalar, R: Network<S>>(
    reblur: &R,
    s_hat: &ArrayView3<S>,
) -> Result<(f64, R)> {
    let (rl, trace) = reblur.forward_traced(s_hat)?;
    let (value, d_rl) = l1_grad(&rl.view(), s_hat)?;
    let mut grads = reblur.zeros_like();
    reblur.backward(&trace, &d_rl, Some(&mut grads), false);
    Ok((value, grads))
}

/// Reblur-module objective: blur reconstruction plus sharpness preservation,
/// equal weights. `l` and `s_hat` are treated as constants.
pub fn reblur_module_loss<S: Scalar, R: Network<S>>(
    reblur: &R,
    l: &ArrayView3<S>,
    b: &ArrayView3<S>,
    s_hat: &ArrayView3<S>,
) -> Result<f64> {
    Ok(blur_reconstruction_loss(reblur, l, b)? + sharpness_preservation_loss(reblur, s_hat)?)
}

/// Value, per-term breakdown, and reblur-parameter gradient of the
/// reblur-module objective.
pub fn reblur_module_grads<S: Scalar, R: Network<S>>(
    reblur: &R,
    l: &ArrayView3<S>,
    b: &ArrayView3<S>,
    s_hat: &ArrayView3<S>,
) -> Result<(f64, f64, R)> {
    let (blur_val, mut grads, _dl) = blur_reconstruction_grads(reblur, l, b)?;
    let (sharp_val, sharp_grads) = sharpness_preservation_grads(reblur, s_hat)?;
    crate::models::module::axpy_params(&mut grads, S::one(), &sharp_grads);
    Ok((blur_val, sharp_val, grads))
}

/// Supervised reblur distance: `l1(M_R(l), M_R(s))` with the reblur
/// parameters frozen.
pub fn supervised_reblur_loss<S: Scalar, R: Network<S>>(
    reblur: &R,
    l: &ArrayView3<S>,
    s: &ArrayView3<S>,
) -> Result<f64> {
    let rl = reblur.forward(l)?;
    let rs = reblur.forward(s)?;
    l1_distance(&rl.view(), &rs.view())
}

/// Value, gradient with respect to `l`, and the (identically zero) gradient
/// with respect to the frozen reblur parameters.
pub fn supervised_reblur_grads<S: Scalar, R: Network<S>>(
    reblur: &R,
    l: &ArrayView3<S>,
    s: &ArrayView3<S>,
) -> Result<(f64, Array3<S>, R)> {
    let (rl, trace) = reblur.forward_traced(l)?;
    let rs = reblur.forward(s)?;
    let (value, d_rl) = l1_grad(&rl.view(), &rs.view())?;
    let dl = reblur.backward(&trace, &d_rl, None, true).expect("want_dx");
    Ok((value, dl, reblur.zeros_like()))
}

/// Deblur objective given an already-computed candidate `l`:
/// `l1(l, s) + lambda * supervised_reblur(l, s)`.
pub fn deblur_total_loss<S: Scalar, R: Network<S>>(
    l: &ArrayView3<S>,
    s: &ArrayView3<S>,
    reblur: &R,
    config: &LossConfig,
) -> Result<f64> {
    config.validate()?;
    let fidelity = l1_distance(l, s)?;
    if config.lambda_reblur == 0.0 {
        return Ok(fidelity);
    }
    Ok(fidelity + config.lambda_reblur * supervised_reblur_loss(reblur, l, s)?)
}

/// Per-term values of the deblur objective.
#[derive(Debug, Clone, Copy)]
pub struct DeblurLossParts {
    pub l1: f64,
    pub reblur_sup: f64,
    pub total: f64,
}

/// Full deblur objective evaluated through the deblur module on a (blurry,
/// sharp) pair, returning the gradient with respect to the deblur parameters.
/// The reblur module is frozen: its parameter gradient is identically zero
/// and is not represented.
pub fn deblur_objective_grads<S: Scalar, R: Network<S>>(
    deblur: &DeblurNet<S>,
    reblur: &R,
    blurry: &ArrayView3<S>,
    sharp: &ArrayView3<S>,
    config: &LossConfig,
) -> Result<(DeblurLossParts, DeblurNet<S>)> {
    config.validate()?;
    let (l, trace_d) = deblur.forward_traced(blurry)?;
    let (l1_val, mut d_l) = l1_grad(&l.view(), sharp)?;
    let mut reblur_sup = 0.0;
    if config.lambda_reblur != 0.0 {
        let (sup_val, d_l_sup, _zero) = supervised_reblur_grads(reblur, &l.view(), sharp)?;
        reblur_sup = sup_val;
        let lambda = S::from_f64(config.lambda_reblur);
        d_l.zip_mut_with(&d_l_sup, |a, &b| *a = *a + lambda * b);
    }
    let mut grads = deblur.zeros_like();
    deblur.backward(&trace_d, &d_l, Some(&mut grads), false);
    let parts = DeblurLossParts {
        l1: l1_val,
        reblur_sup,
        total: l1_val + config.lambda_reblur * reblur_sup,
    };
    Ok((parts, grads))
}

/// Self-supervised reblur distance: `l1(M_R(l), l*)` where `l*` is a detached
/// copy of `l`'s value.
pub fn self_supervised_reblur_loss<S: Scalar, R: Network<S>>(
    reblur: &R,
    l: &ArrayView3<S>,
) -> Result<f64> {
    let rl = reblur.forward(l)?;
    l1_distance(&rl.view(), l)
}

/// Gradient of the self-supervised distance with respect to `l`, flowing only
/// through the reblur forward; the detached branch contributes nothing and
/// its (identically zero) gradient is returned alongside. The reblur
/// parameters are frozen.
pub fn self_supervised_image_grads<S: Scalar, R: Network<S>>(
    reblur: &R,
    l: &ArrayView3<S>,
) -> Result<(f64, Array3<S>, Array3<S>)> {
    let (rl, trace) = reblur.forward_traced(l)?;
    let (value, d_rl) = l1_grad(&rl.view(), l)?;
    let dl_live = reblur.backward(&trace, &d_rl, None, true).expect("want_dx");
    let dl_detached = Array3::zeros(dl_live.raw_dim());
    Ok((value, dl_live, dl_detached))
}

/// Self-supervised objective evaluated through the deblur module on a blurry
/// image; returns the deblur-parameter gradient with the reblur module frozen.
pub fn self_supervised_objective_grads<S: Scalar, R: Network<S>>(
    deblur: &DeblurNet<S>,
    reblur: &R,
    blurry: &ArrayView3<S>,
) -> Result<(f64, DeblurNet<S>)> {
    let (l, trace_d) = deblur.forward_traced(blurry)?;
    let (value, d_l, _detached) = self_supervised_image_grads(reblur, &l.view())?;
    let mut grads = deblur.zeros_like();
    deblur.backward(&trace_d, &d_l, Some(&mut grads), false);
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::reblur::{ReblurConfig, ReblurNet};
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_image(h: usize, w: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array3::zeros((3, h, w));
        for v in x.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        x
    }

    fn toy_reblur(seed: u64) -> ReblurNet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ReblurConfig { channels: 4, num_resblocks: 1, conv_kernel: 5 };
        let mut net = ReblurNet::init(&cfg, &mut rng).unwrap();
        for v in net.out.weight.iter_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
        net
    }

    #[test]
    fn l1_identity_is_zero_and_constant_diff_is_exact() {
        let a = rand_image(6, 6, 1);
        assert_eq!(l1_distance(&a.view(), &a.view()).unwrap(), 0.0);
        let b = Array3::from_elem((3, 6, 6), 0.2);
        let c = Array3::from_elem((3, 6, 6), 0.5);
        assert_abs_diff_eq!(l1_distance(&b.view(), &c.view()).unwrap(), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn l1_rejects_shape_mismatch() {
        let a = rand_image(6, 6, 1);
        let b = rand_image(6, 7, 2);
        assert!(l1_distance(&a.view(), &b.view()).is_err());
    }

    #[test]
    fn l1_gradient_matches_finite_difference_away_from_kinks() {
        let a = rand_image(5, 5, 3);
        let b = rand_image(5, 5, 4);
        let (_, grad) = l1_grad(&a.view(), &b.view()).unwrap();
        let eps = 1e-7;
        for flat in [0usize, 17, 40, 74] {
            let mut ap = a.clone();
            ap.as_slice_mut().unwrap()[flat] += eps;
            let lp = l1_distance(&ap.view(), &b.view()).unwrap();
            ap.as_slice_mut().unwrap()[flat] -= 2.0 * eps;
            let lm = l1_distance(&ap.view(), &b.view()).unwrap();
            let fd = (lp - lm) / (2.0 * eps);
            let an = grad.as_slice().unwrap()[flat];
            assert!((fd - an).abs() < 1e-4 * (1.0 + fd.abs()), "fd {fd} an {an}");
        }
    }

    #[test]
    fn identity_reblur_makes_reconstruction_collapse_to_l1() {
        // zero-initialized final layer: M_R is the identity map
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = ReblurConfig { channels: 4, num_resblocks: 1, conv_kernel: 5 };
        let reblur = ReblurNet::<f64>::init(&cfg, &mut rng).unwrap();
        let l = rand_image(8, 8, 6);
        let b = rand_image(8, 8, 7);
        assert_abs_diff_eq!(
            blur_reconstruction_loss(&reblur, &l.view(), &b.view()).unwrap(),
            l1_distance(&l.view(), &b.view()).unwrap(),
            epsilon = 1e-12
        );
        assert_eq!(blur_reconstruction_loss(&reblur, &b.view(), &b.view()).unwrap(), 0.0);
        // sharpness preservation vanishes for any input
        assert_eq!(sharpness_preservation_loss(&reblur, &l.view()).unwrap(), 0.0);
    }

    #[test]
    fn reblur_objective_decomposes_exactly() {
        let reblur = toy_reblur(8);
        let l = rand_image(8, 8, 9);
        let b = rand_image(8, 8, 10);
        let s_hat = rand_image(8, 8, 11);
        let total = reblur_module_loss(&reblur, &l.view(), &b.view(), &s_hat.view()).unwrap();
        let parts = blur_reconstruction_loss(&reblur, &l.view(), &b.view()).unwrap()
            + sharpness_preservation_loss(&reblur, &s_hat.view()).unwrap();
        assert_eq!(total, parts);
    }

    #[test]
    fn supervised_reblur_zero_when_equal_and_collapses_for_identity_module() {
        let reblur = toy_reblur(12);
        let l = rand_image(8, 8, 13);
        assert_eq!(supervised_reblur_loss(&reblur, &l.view(), &l.view()).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let cfg = ReblurConfig { channels: 4, num_resblocks: 1, conv_kernel: 5 };
        let identity = ReblurNet::<f64>::init(&cfg, &mut rng).unwrap();
        let s = rand_image(8, 8, 15);
        assert_abs_diff_eq!(
            supervised_reblur_loss(&identity, &l.view(), &s.view()).unwrap(),
            l1_distance(&l.view(), &s.view()).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn deblur_total_loss_weights_add_up() {
        let reblur = toy_reblur(16);
        let l = rand_image(8, 8, 17);
        let s = rand_image(8, 8, 18);
        let cfg0 = LossConfig { lambda_reblur: 0.0, ..Default::default() };
        assert_eq!(
            deblur_total_loss(&l.view(), &s.view(), &reblur, &cfg0).unwrap(),
            l1_distance(&l.view(), &s.view()).unwrap()
        );
        let cfg1 = LossConfig::default();
        let expect = l1_distance(&l.view(), &s.view()).unwrap()
            + supervised_reblur_loss(&reblur, &l.view(), &s.view()).unwrap();
        assert_abs_diff_eq!(
            deblur_total_loss(&l.view(), &s.view(), &reblur, &cfg1).unwrap(),
            expect,
            epsilon = 1e-15
        );
    }

    #[test]
    fn self_supervised_loss_is_zero_for_identity_module_with_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let cfg = ReblurConfig { channels: 4, num_resblocks: 1, conv_kernel: 5 };
        let identity = ReblurNet::<f64>::init(&cfg, &mut rng).unwrap();
        let l = rand_image(8, 8, 20);
        let (value, dl_live, dl_detached) =
            self_supervised_image_grads(&identity, &l.view()).unwrap();
        assert_eq!(value, 0.0);
        // subgradient-at-zero convention: no update at the fixed point
        assert!(dl_live.iter().all(|&v| v == 0.0));
        assert!(dl_detached.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn losses_are_nonnegative_and_zero_only_at_equality() {
        let reblur = toy_reblur(21);
        for seed in 22..27 {
            let a = rand_image(8, 8, seed);
            let b = rand_image(8, 8, seed + 100);
            assert!(l1_distance(&a.view(), &b.view()).unwrap() > 0.0);
            assert!(blur_reconstruction_loss(&reblur, &a.view(), &b.view()).unwrap() >= 0.0);
            assert!(supervised_reblur_loss(&reblur, &a.view(), &b.view()).unwrap() >= 0.0);
        }
    }
}
