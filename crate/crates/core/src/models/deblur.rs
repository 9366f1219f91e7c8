//! Residual U-Net deblurring module: two stride-2 encoder stages, a ResBlock
//! stack at quarter resolution, a mirrored decoder with additive skips, and a
//! global input-to-output residual (zero-initialized final layer, so the
//! module starts as the identity map).

use crate::error::{Error, Result};
use crate::models::conv::{Conv2d, ConvTrace};
use crate::models::layers::{ResBlock, ResBlockTrace};
use crate::models::module::Network;
use crate::models::ops::{relu, relu_backward, upsample2, upsample2_backward};
use crate::scalar::Scalar;
use ndarray::{Array3, ArrayView3};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeblurConfig {
    pub base_channels: usize,
    pub mid_channels: [usize; 2],
    pub num_resblocks: usize,
    pub conv_kernel_outer: usize,
    pub conv_kernel_inner: usize,
}

impl Default for DeblurConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            mid_channels: [128, 192],
            num_resblocks: 8,
            conv_kernel_outer: 5,
            conv_kernel_inner: 3,
        }
    }
}

impl DeblurConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_resblocks == 0 {
            return Err(Error::InvalidConfig("num_resblocks must be >= 1".into()));
        }
        if self.base_channels == 0 || self.mid_channels.iter().any(|&c| c == 0) {
            return Err(Error::InvalidConfig("channel counts must be positive".into()));
        }
        if self.conv_kernel_outer % 2 == 0 || self.conv_kernel_inner % 2 == 0 {
            return Err(Error::InvalidConfig("conv kernels must be odd".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DeblurNet<S: Scalar> {
    pub config: DeblurConfig,
    pub enc0: Conv2d<S>,
    pub enc1: Conv2d<S>,
    pub enc2: Conv2d<S>,
    pub blocks: Vec<ResBlock<S>>,
    pub dec1: Conv2d<S>,
    pub dec2: Conv2d<S>,
    pub out: Conv2d<S>,
}

pub struct DeblurTrace<S: Scalar> {
    t_e0: ConvTrace<S>,
    m_e0: Array3<bool>,
    t_e1: ConvTrace<S>,
    m_e1: Array3<bool>,
    t_e2: ConvTrace<S>,
    m_e2: Array3<bool>,
    t_blocks: Vec<ResBlockTrace<S>>,
    t_d1: ConvTrace<S>,
    m_d1: Array3<bool>,
    t_d2: ConvTrace<S>,
    m_d2: Array3<bool>,
    t_out: ConvTrace<S>,
}

impl<S: Scalar> DeblurNet<S> {
    pub fn init(config: &DeblurConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (b, [m0, m1]) = (config.base_channels, config.mid_channels);
        let (ko, ki) = (config.conv_kernel_outer, config.conv_kernel_inner);
        Ok(Self {
            config: config.clone(),
            enc0: Conv2d::init(3, b, ko, 1, rng),
            enc1: Conv2d::init(b, m0, ki, 2, rng),
            enc2: Conv2d::init(m0, m1, ki, 2, rng),
            blocks: (0..config.num_resblocks).map(|_| ResBlock::init(m1, ki, rng)).collect(),
            dec1: Conv2d::init(m1, m0, ki, 1, rng),
            dec2: Conv2d::init(m0, b, ki, 1, rng),
            // zero-initialized final layer: identity mapping at init
            out: Conv2d::zeros(b, 3, ko, 1),
        })
    }

    fn zeros_from_config(config: &DeblurConfig) -> Self {
        let (b, [m0, m1]) = (config.base_channels, config.mid_channels);
        let (ko, ki) = (config.conv_kernel_outer, config.conv_kernel_inner);
        Self {
            config: config.clone(),
            enc0: Conv2d::zeros(3, b, ko, 1),
            enc1: Conv2d::zeros(b, m0, ki, 2),
            enc2: Conv2d::zeros(m0, m1, ki, 2),
            blocks: (0..config.num_resblocks).map(|_| ResBlock::zeros(m1, ki)).collect(),
            dec1: Conv2d::zeros(m1, m0, ki, 1),
            dec2: Conv2d::zeros(m0, b, ki, 1),
            out: Conv2d::zeros(b, 3, ko, 1),
        }
    }

    pub fn zeros(config: &DeblurConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::zeros_from_config(config))
    }

    fn check_input(&self, x: &ArrayView3<S>) -> Result<()> {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if c != 3 {
            return Err(Error::shape("3 channels", format!("{c} channels")));
        }
        if h % 4 != 0 || w % 4 != 0 || h < 8 || w < 8 {
            return Err(Error::shape(
                "spatial dims divisible by 4 and >= 8",
                format!("{h}x{w}"),
            ));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> DeblurNet<T> {
        DeblurNet {
            config: self.config.clone(),
            enc0: self.enc0.cast(),
            enc1: self.enc1.cast(),
            enc2: self.enc2.cast(),
            blocks: self.blocks.iter().map(|b| b.cast()).collect(),
            dec1: self.dec1.cast(),
            dec2: self.dec2.cast(),
            out: self.out.cast(),
        }
    }
}

impl<S: Scalar> Network<S> for DeblurNet<S> {
    type Trace = DeblurTrace<S>;

    fn forward(&self, x: &ArrayView3<S>) -> Result<Array3<S>> {
        self.check_input(x)?;
        let mut e0 = self.enc0.forward(x)?;
        relu(&mut e0);
        let mut e1 = self.enc1.forward(&e0.view())?;
        relu(&mut e1);
        let mut e2 = self.enc2.forward(&e1.view())?;
        relu(&mut e2);
        let mut r = e2;
        for block in &self.blocks {
            r = block.forward(&r.view())?;
        }
        let mut d1 = self.dec1.forward(&upsample2(&r.view()).view())?;
        relu(&mut d1);
        d1.zip_mut_with(&e1, |a, &b| *a = *a + b);
        let mut d2 = self.dec2.forward(&upsample2(&d1.view()).view())?;
        relu(&mut d2);
        d2.zip_mut_with(&e0, |a, &b| *a = *a + b);
        let mut y = self.out.forward(&d2.view())?;
        y.zip_mut_with(x, |a, &b| *a = *a + b);
        Ok(y)
    }

    fn forward_traced(&self, x: &ArrayView3<S>) -> Result<(Array3<S>, DeblurTrace<S>)> {
        self.check_input(x)?;
        let (mut e0, t_e0) = self.enc0.forward_traced(x)?;
        let m_e0 = relu(&mut e0);
        let (mut e1, t_e1) = self.enc1.forward_traced(&e0.view())?;
        let m_e1 = relu(&mut e1);
        let (mut e2, t_e2) = self.enc2.forward_traced(&e1.view())?;
        let m_e2 = relu(&mut e2);
        let mut r = e2;
        let mut t_blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, t) = block.forward_traced(&r.view())?;
            t_blocks.push(t);
            r = next;
        }
        let (mut d1, t_d1) = self.dec1.forward_traced(&upsample2(&r.view()).view())?;
        let m_d1 = relu(&mut d1);
        d1.zip_mut_with(&e1, |a, &b| *a = *a + b);
        let (mut d2, t_d2) = self.dec2.forward_traced(&upsample2(&d1.view()).view())?;
        let m_d2 = relu(&mut d2);
        d2.zip_mut_with(&e0, |a, &b| *a = *a + b);
        let (mut y, t_out) = self.out.forward_traced(&d2.view())?;
        y.zip_mut_with(x, |a, &b| *a = *a + b);
        Ok((
            y,
            DeblurTrace { t_e0, m_e0, t_e1, m_e1, t_e2, m_e2, t_blocks, t_d1, m_d1, t_d2, m_d2, t_out },
        ))
    }

    fn backward(
        &self,
        trace: &DeblurTrace<S>,
        dy: &Array3<S>,
        grads: Option<&mut Self>,
        want_dx: bool,
    ) -> Option<Array3<S>> {
        // Pull the gradient container apart once so each layer can accumulate.
        let (mut g_enc0, mut g_enc1, mut g_enc2, mut g_blocks, mut g_dec1, mut g_dec2, mut g_out) =
            match grads {
                Some(g) => (
                    Some(&mut g.enc0),
                    Some(&mut g.enc1),
                    Some(&mut g.enc2),
                    g.blocks.iter_mut().map(Some).collect::<Vec<_>>(),
                    Some(&mut g.dec1),
                    Some(&mut g.dec2),
                    Some(&mut g.out),
                ),
                None => (None, None, None, self.blocks.iter().map(|_| None).collect(), None, None, None),
            };

        let g_d2 = self
            .out
            .backward(&trace.t_out, dy, g_out.take(), true)
            .expect("want_dx");
        // skip branch to e0 keeps the unmasked gradient
        let mut g_e0_acc = g_d2.clone();
        let mut g_relu2 = g_d2;
        relu_backward(&mut g_relu2, &trace.m_d2);
        let g_u2 = self
            .dec2
            .backward(&trace.t_d2, &g_relu2, g_dec2.take(), true)
            .expect("want_dx");
        let g_d1 = upsample2_backward(&g_u2);
        let mut g_e1_acc = g_d1.clone();
        let mut g_relu1 = g_d1;
        relu_backward(&mut g_relu1, &trace.m_d1);
        let g_u1 = self
            .dec1
            .backward(&trace.t_d1, &g_relu1, g_dec1.take(), true)
            .expect("want_dx");
        let mut g_r = upsample2_backward(&g_u1);
        for (i, block) in self.blocks.iter().enumerate().rev() {
            g_r = block.backward(&trace.t_blocks[i], &g_r, g_blocks[i].take());
        }
        relu_backward(&mut g_r, &trace.m_e2);
        let g_from_e2 = self
            .enc2
            .backward(&trace.t_e2, &g_r, g_enc2.take(), true)
            .expect("want_dx");
        g_e1_acc.zip_mut_with(&g_from_e2, |a, &b| *a = *a + b);
        relu_backward(&mut g_e1_acc, &trace.m_e1);
        let g_from_e1 = self
            .enc1
            .backward(&trace.t_e1, &g_e1_acc, g_enc1.take(), true)
            .expect("want_dx");
        g_e0_acc.zip_mut_with(&g_from_e1, |a, &b| *a = *a + b);
        relu_backward(&mut g_e0_acc, &trace.m_e0);
        let g_x = self.enc0.backward(&trace.t_e0, &g_e0_acc, g_enc0.take(), want_dx);
        g_x.map(|mut dx| {
            dx.zip_mut_with(dy, |a, &b| *a = *a + b); // global residual
            dx
        })
    }

    fn zeros_like(&self) -> Self {
        Self::zeros_from_config(&self.config)
    }

    fn convs(&self) -> Vec<&Conv2d<S>> {
        let mut v = vec![&self.enc0, &self.enc1, &self.enc2];
        for b in &self.blocks {
            v.push(&b.c1);
            v.push(&b.c2);
        }
        v.extend([&self.dec1, &self.dec2, &self.out]);
        v
    }

    fn convs_mut(&mut self) -> Vec<&mut Conv2d<S>> {
        let mut v: Vec<&mut Conv2d<S>> = vec![];
        v.push(&mut self.enc0);
        v.push(&mut self.enc1);
        v.push(&mut self.enc2);
        for b in &mut self.blocks {
            v.push(&mut b.c1);
            v.push(&mut b.c2);
        }
        v.push(&mut self.dec1);
        v.push(&mut self.dec2);
        v.push(&mut self.out);
        v
    }

    fn conv_names(&self) -> Vec<String> {
        let mut v = vec!["enc0".into(), "enc1".into(), "enc2".into()];
        for i in 0..self.blocks.len() {
            v.push(format!("block{i}.c1"));
            v.push(format!("block{i}.c2"));
        }
        v.extend(["dec1".into(), "dec2".into(), "out".into()]);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(n: usize) -> DeblurConfig {
        DeblurConfig {
            base_channels: 6,
            mid_channels: [8, 10],
            num_resblocks: n,
            conv_kernel_outer: 5,
            conv_kernel_inner: 3,
        }
    }

    fn rand_input(h: usize, w: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array3::zeros((3, h, w));
        for v in x.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        x
    }

    #[test]
    fn identity_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DeblurNet::<f64>::init(&small_config(2), &mut rng).unwrap();
        let x = rand_input(8, 12, 5);
        let y = net.forward(&x.view()).unwrap();
        for (a, b) in x.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn default_first_layer_param_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = DeblurNet::<f32>::init(&DeblurConfig::default(), &mut rng).unwrap();
        assert_eq!(net.enc0.param_count(), 3 * 64 * 5 * 5 + 64);
    }

    #[test]
    fn resblock_count_changes_params_by_exact_amount() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n4 = DeblurNet::<f32>::init(&DeblurConfig { num_resblocks: 4, ..Default::default() }, &mut rng)
            .unwrap()
            .param_count();
        let n8 = DeblurNet::<f32>::init(&DeblurConfig { num_resblocks: 8, ..Default::default() }, &mut rng)
            .unwrap()
            .param_count();
        assert_eq!(n8 - n4, 4 * (2 * (192 * 192 * 3 * 3 + 192)));
    }

    #[test]
    fn hand_counted_params_small_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = small_config(2);
        let net = DeblurNet::<f32>::init(&cfg, &mut rng).unwrap();
        let expected = (3 * 6 * 25 + 6)        // enc0
            + (6 * 8 * 9 + 8)                  // enc1
            + (8 * 10 * 9 + 10)                // enc2
            + 2 * 2 * (10 * 10 * 9 + 10)       // blocks
            + (10 * 8 * 9 + 8)                 // dec1
            + (8 * 6 * 9 + 6)                  // dec2
            + (6 * 3 * 25 + 3); // out
        assert_eq!(net.param_count(), expected);
    }

    #[test]
    fn rejects_non_divisible_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DeblurNet::<f64>::init(&small_config(1), &mut rng).unwrap();
        assert!(net.forward(&rand_input(10, 8, 1).view()).is_err());
        assert!(net.forward(&rand_input(8, 9, 1).view()).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = DeblurNet::<f64>::init(&small_config(1), &mut rng).unwrap();
        // leave identity so outputs are nontrivial
        for v in net.out.weight.iter_mut() {
            *v = 0.01;
        }
        let x = rand_input(8, 8, 9);
        let y1 = net.forward(&x.view()).unwrap();
        let y2 = net.forward(&x.view()).unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = DeblurNet::<f64>::init(&small_config(1), &mut rng).unwrap();
        for v in net.out.weight.iter_mut() {
            *v = rng.gen_range(-0.05..0.05);
        }
        let x = rand_input(8, 8, 21);
        let (y0, trace) = net.forward_traced(&x.view()).unwrap();
        let mut t = Array3::zeros(y0.raw_dim());
        for (i, v) in t.iter_mut().enumerate() {
            *v = ((i as f64) * 0.77).sin();
        }
        let mut grads = net.zeros_like();
        net.backward(&trace, &t, Some(&mut grads), false);

        let loss = |n: &DeblurNet<f64>| -> f64 {
            n.forward(&x.view())
                .unwrap()
                .iter()
                .zip(t.iter())
                .map(|(a, b)| a * b)
                .sum()
        };
        let eps = 1e-6;
        let names = net.conv_names();
        for (ci, name) in names.iter().enumerate() {
            let wlen = net.convs()[ci].weight.len();
            for &flat in &[0usize, wlen / 3, wlen - 1] {
                let mut np = net.clone();
                np.convs_mut()[ci].weight.as_slice_mut().unwrap()[flat] += eps;
                let lp = loss(&np);
                np.convs_mut()[ci].weight.as_slice_mut().unwrap()[flat] -= 2.0 * eps;
                let lm = loss(&np);
                let fd = (lp - lm) / (2.0 * eps);
                let an = grads.convs()[ci].weight.as_slice().unwrap()[flat];
                assert!(
                    (fd - an).abs() <= 1e-4 * (1.0 + fd.abs()),
                    "{name}.weight[{flat}]: fd {fd} vs an {an}"
                );
            }
        }
    }
}
