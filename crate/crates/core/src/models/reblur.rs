//! Blur-amplifying module: a plain residual network with 5x5 convolutions and
//! no strided or upsampling layers anywhere, so it accepts any image size the
//! kernels fit and stays shift-equivariant away from the padded border.

use crate::error::{Error, Result};
use crate::models::conv::{Conv2d, ConvTrace};
use crate::models::layers::{ResBlock, ResBlockTrace};
use crate::models::module::Network;
use crate::models::ops::{relu, relu_backward};
use crate::scalar::Scalar;
use ndarray::{Array3, ArrayView3};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReblurConfig {
    pub channels: usize,
    pub num_resblocks: usize,
    pub conv_kernel: usize,
}

impl Default for ReblurConfig {
    fn default() -> Self {
        Self { channels: 64, num_resblocks: 2, conv_kernel: 5 }
    }
}

impl ReblurConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::InvalidConfig("channels must be positive".into()));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::InvalidConfig("conv_kernel must be odd".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReblurNet<S: Scalar> {
    pub config: ReblurConfig,
    pub stem: Conv2d<S>,
    pub blocks: Vec<ResBlock<S>>,
    pub out: Conv2d<S>,
}

pub struct ReblurTrace<S: Scalar> {
    t_stem: ConvTrace<S>,
    m_stem: Array3<bool>,
    t_blocks: Vec<ResBlockTrace<S>>,
    t_out: ConvTrace<S>,
}

impl<S: Scalar> ReblurNet<S> {
    pub fn init(config: &ReblurConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (c, k) = (config.channels, config.conv_kernel);
        Ok(Self {
            config: config.clone(),
            stem: Conv2d::init(3, c, k, 1, rng),
            blocks: (0..config.num_resblocks).map(|_| ResBlock::init(c, k, rng)).collect(),
            out: Conv2d::zeros(c, 3, k, 1),
        })
    }

    fn zeros_from_config(config: &ReblurConfig) -> Self {
        let (c, k) = (config.channels, config.conv_kernel);
        Self {
            config: config.clone(),
            stem: Conv2d::zeros(3, c, k, 1),
            blocks: (0..config.num_resblocks).map(|_| ResBlock::zeros(c, k)).collect(),
            out: Conv2d::zeros(c, 3, k, 1),
        }
    }

    pub fn zeros(config: &ReblurConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::zeros_from_config(config))
    }

    fn check_input(&self, x: &ArrayView3<S>) -> Result<()> {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if c != 3 {
            return Err(Error::shape("3 channels", format!("{c} channels")));
        }
        let k = self.config.conv_kernel;
        if h < k || w < k {
            return Err(Error::shape(format!("at least {k}x{k}"), format!("{h}x{w}")));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ReblurNet<T> {
        ReblurNet {
            config: self.config.clone(),
            stem: self.stem.cast(),
            blocks: self.blocks.iter().map(|b| b.cast()).collect(),
            out: self.out.cast(),
        }
    }
}

impl<S: Scalar> Network<S> for ReblurNet<S> {
    type Trace = ReblurTrace<S>;

    fn forward(&self, x: &ArrayView3<S>) -> Result<Array3<S>> {
        self.check_input(x)?;
        let mut f = self.stem.forward(x)?;
        relu(&mut f);
        for block in &self.blocks {
            f = block.forward(&f.view())?;
        }
        let mut y = self.out.forward(&f.view())?;
        y.zip_mut_with(x, |a, &b| *a = *a + b);
        Ok(y)
    }

    fn forward_traced(&self, x: &ArrayView3<S>) -> Result<(Array3<S>, ReblurTrace<S>)> {
        self.check_input(x)?;
        let (mut f, t_stem) = self.stem.forward_traced(x)?;
        let m_stem = relu(&mut f);
        let mut t_blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, t) = block.forward_traced(&f.view())?;
            t_blocks.push(t);
            f = next;
        }
        let (mut y, t_out) = self.out.forward_traced(&f.view())?;
        y.zip_mut_with(x, |a, &b| *a = *a + b);
        Ok((y, ReblurTrace { t_stem, m_stem, t_blocks, t_out }))
    }

    fn backward(
        &self,
        trace: &ReblurTrace<S>,
        dy: &Array3<S>,
        grads: Option<&mut Self>,
        want_dx: bool,
    ) -> Option<Array3<S>> {
        let (mut g_stem, mut g_blocks, mut g_out) = match grads {
            Some(g) => (
                Some(&mut g.stem),
                g.blocks.iter_mut().map(Some).collect::<Vec<_>>(),
                Some(&mut g.out),
            ),
            None => (None, self.blocks.iter().map(|_| None).collect(), None),
        };
        let mut g_f = self
            .out
            .backward(&trace.t_out, dy, g_out.take(), true)
            .expect("want_dx");
        for (i, block) in self.blocks.iter().enumerate().rev() {
            g_f = block.backward(&trace.t_blocks[i], &g_f, g_blocks[i].take());
        }
        relu_backward(&mut g_f, &trace.m_stem);
        let g_x = self.stem.backward(&trace.t_stem, &g_f, g_stem.take(), want_dx);
        g_x.map(|mut dx| {
            dx.zip_mut_with(dy, |a, &b| *a = *a + b);
            dx
        })
    }

    fn zeros_like(&self) -> Self {
        Self::zeros_from_config(&self.config)
    }

    fn convs(&self) -> Vec<&Conv2d<S>> {
        let mut v = vec![&self.stem];
        for b in &self.blocks {
            v.push(&b.c1);
            v.push(&b.c2);
        }
        v.push(&self.out);
        v
    }

    fn convs_mut(&mut self) -> Vec<&mut Conv2d<S>> {
        let mut v: Vec<&mut Conv2d<S>> = vec![];
        v.push(&mut self.stem);
        for b in &mut self.blocks {
            v.push(&mut b.c1);
            v.push(&mut b.c2);
        }
        v.push(&mut self.out);
        v
    }

    fn conv_names(&self) -> Vec<String> {
        let mut v = vec!["stem".to_string()];
        for i in 0..self.blocks.len() {
            v.push(format!("block{i}.c1"));
            v.push(format!("block{i}.c2"));
        }
        v.push("out".into());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_input(h: usize, w: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array3::zeros((3, h, w));
        for v in x.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        x
    }

    #[test]
    fn identity_at_init_and_odd_sizes_accepted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = ReblurNet::<f64>::init(&ReblurConfig { channels: 8, ..Default::default() }, &mut rng)
            .unwrap();
        let x = rand_input(65, 67, 2);
        let y = net.forward(&x.view()).unwrap();
        for (a, b) in x.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn default_param_count_matches_hand_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = ReblurNet::<f32>::init(&ReblurConfig::default(), &mut rng).unwrap();
        assert_eq!(
            net.param_count(),
            4864 + 2 * 2 * (64 * 64 * 5 * 5 + 64) + (64 * 3 * 5 * 5 + 3)
        );
        assert_eq!(net.param_count(), 419_523);
    }

    #[test]
    fn shift_consistency_on_interior() {
        // Two windows of one larger scene, offset by (dy, dx): on interior
        // pixels whose receptive fields stay inside both windows, the outputs
        // must agree (all layers shift-equivariant; only the reflect-padding
        // band near the borders differs).
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = ReblurConfig { channels: 8, num_resblocks: 1, conv_kernel: 5 };
        let mut net = ReblurNet::<f64>::init(&cfg, &mut rng).unwrap();
        for v in net.out.weight.iter_mut() {
            *v = rng.gen_range(-0.05..0.05);
        }
        let base = rand_input(56, 56, 3);
        let (dy, dx) = (3usize, 2usize);
        let win = 40usize;
        let a_in = base.slice(ndarray::s![.., 0..win, 0..win]).to_owned();
        let b_in = base.slice(ndarray::s![.., dy..dy + win, dx..dx + win]).to_owned();
        let y_a = net.forward(&a_in.view()).unwrap();
        let y_b = net.forward(&b_in.view()).unwrap();
        // receptive-field radius is 8 here; stay well clear of both borders
        let margin = 12;
        for c in 0..3 {
            for y in margin..win - margin {
                for xq in margin..win - margin {
                    let direct = y_a[[c, y + dy, xq + dx]];
                    let shifted = y_b[[c, y, xq]];
                    assert!(
                        (direct - shifted).abs() < 1e-5,
                        "interior shift mismatch at ({c},{y},{xq}): {direct} vs {shifted}"
                    );
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_difference_through_whole_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = ReblurConfig { channels: 4, num_resblocks: 1, conv_kernel: 5 };
        let mut net = ReblurNet::<f64>::init(&cfg, &mut rng).unwrap();
        for v in net.out.weight.iter_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
        let x = rand_input(8, 8, 7);
        let (y0, trace) = net.forward_traced(&x.view()).unwrap();
        let mut t = Array3::zeros(y0.raw_dim());
        for (i, v) in t.iter_mut().enumerate() {
            *v = ((i as f64) * 0.41).cos();
        }
        let mut grads = net.zeros_like();
        let dx = net.backward(&trace, &t, Some(&mut grads), true).unwrap();

        let loss = |n: &ReblurNet<f64>, xi: &Array3<f64>| -> f64 {
            n.forward(&xi.view()).unwrap().iter().zip(t.iter()).map(|(a, b)| a * b).sum()
        };
        let eps = 1e-6;
        for ci in 0..net.convs().len() {
            let wlen = net.convs()[ci].weight.len();
            for &flat in &[0usize, wlen / 2, wlen - 1] {
                let mut np = net.clone();
                np.convs_mut()[ci].weight.as_slice_mut().unwrap()[flat] += eps;
                let lp = loss(&np, &x);
                np.convs_mut()[ci].weight.as_slice_mut().unwrap()[flat] -= 2.0 * eps;
                let lm = loss(&np, &x);
                let fd = (lp - lm) / (2.0 * eps);
                let an = grads.convs()[ci].weight.as_slice().unwrap()[flat];
                assert!((fd - an).abs() <= 1e-4 * (1.0 + fd.abs()), "conv{ci}.w[{flat}]");
            }
        }
        for flat in [0usize, 50, 150] {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[flat] += eps;
            let lp = loss(&net, &xp);
            xp.as_slice_mut().unwrap()[flat] -= 2.0 * eps;
            let lm = loss(&net, &xp);
            let fd = (lp - lm) / (2.0 * eps);
            let an = dx.as_slice().unwrap()[flat];
            assert!((fd - an).abs() <= 1e-4 * (1.0 + fd.abs()), "x[{flat}]");
        }
    }
}
