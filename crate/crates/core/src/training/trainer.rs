//! Alternating two-module training, plus the single-module modes used for
//! baselines and capacity studies.
//!
//! Each joint step runs two isolated sub-steps in order: (1) update the
//! deblur parameters against the fidelity + supervised-reblur objective with
//! the reblur module frozen, then (2) recompute the deblurred and
//! pseudo-sharp images from the updated deblur module, detach them, and
//! update the reblur parameters against reconstruction + sharpness
//! preservation.

use crate::data::batch::epoch_batches;
use crate::data::synth::ImagePair;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::{l1_distance, l1_grad, LossConfig, LossReport};
use crate::models::checkpoint::{Checkpoint, OptimizerState};
use crate::models::deblur::{DeblurConfig, DeblurNet};
use crate::models::module::{scale_params, Network};
use crate::models::reblur::{ReblurConfig, ReblurNet};
use crate::training::adam::Adam;
use crate::training::schedule::{lr_schedule_with, validate_milestones, DEFAULT_MILESTONES};
use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Serialized training state; identical to a checkpoint with optimizer state.
pub type TrainState = Checkpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Alternate both modules every step.
    Joint,
    /// Only the deblur sub-step (the pure-L1 baseline when lambda is 0).
    DeblurOnly,
    /// Only the reblur module, by blur reconstruction alone, against the
    /// frozen deblur module's outputs (the independent-training protocol of
    /// the capacity study).
    ReblurOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub milestones: Vec<f64>,
    pub lambda_reblur: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub deblur: DeblurConfig,
    pub reblur: ReblurConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 8,
            initial_lr: 1e-4,
            milestones: DEFAULT_MILESTONES.to_vec(),
            lambda_reblur: 1.0,
            seed: 0,
            mode: TrainMode::Joint,
            deblur: DeblurConfig::default(),
            reblur: ReblurConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.initial_lr <= 0.0 {
            return Err(Error::InvalidConfig("initial_lr must be positive".into()));
        }
        validate_milestones(&self.milestones)?;
        self.loss_config().validate()?;
        self.deblur.validate()?;
        self.reblur.validate()?;
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { lambda_reblur: self.lambda_reblur, distance_p: 1 }
    }
}

/// Optional extra loss term added to the deblur objective, for plugging in
/// externally defined criteria (e.g. learned perceptual distances). The
/// callable receives (candidate, sharp) and returns the loss value and its
/// gradient with respect to the candidate.
pub struct ExternalLoss {
    pub name: String,
    pub weight: f64,
    #[allow(clippy::type_complexity)]
    pub func: Box<dyn Fn(&Array3<f32>, &Array3<f32>) -> (f64, Array3<f32>) + Send + Sync>,
}

/// Where training artifacts go; `None` keeps everything in memory.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub dir: Option<std::path::PathBuf>,
    /// Write an intermediate checkpoint every this many epochs (0 = final only).
    pub checkpoint_every: u64,
}

pub fn init_state(config: &TrainConfig) -> Result<TrainState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let deblur = DeblurNet::<f32>::init(&config.deblur, &mut rng)?;
    let reblur = ReblurNet::<f32>::init(&config.reblur, &mut rng)?;
    let optimizer = OptimizerState { deblur: Adam::new(&deblur), reblur: Adam::new(&reblur) };
    Ok(Checkpoint {
        epoch: 0,
        step: 0,
        seed: config.seed,
        deblur,
        reblur,
        optimizer: Some(optimizer),
    })
}

/// Deblur sub-step over one batch: evaluates the total deblur objective with
/// the reblur module frozen and applies one Adam update to the deblur
/// parameters. Returns (l1, supervised-reblur, external) batch means.
pub fn deblur_substep(
    state: &mut TrainState,
    pairs: &[ImagePair],
    batch: &[usize],
    config: &TrainConfig,
    lr: f64,
    external: Option<&ExternalLoss>,
) -> Result<(f64, f64, f64)> {
    let mut grads = state.deblur.zeros_like();
    let mut l1_sum = 0.0;
    let mut sup_sum = 0.0;
    let mut ext_sum = 0.0;
    let lambda = config.lambda_reblur;
    for &idx in batch {
        let b = pairs[idx].blurry.view();
        let s = pairs[idx].sharp.view();
        let (l, trace_d) = state.deblur.forward_traced(&b)?;
        let (l1_val, mut d_l) = l1_grad(&l.view(), &s)?;
        l1_sum += l1_val;
        if lambda != 0.0 {
            let (rl, trace_r) = state.reblur.forward_traced(&l.view())?;
            let rs = state.reblur.forward(&s)?;
            let (sup_val, d_rl) = l1_grad(&rl.view(), &rs.view())?;
            sup_sum += sup_val;
            // reblur module frozen: input gradient only
            let d_l_sup = state
                .reblur
                .backward(&trace_r, &d_rl, None, true)
                .expect("want_dx");
            let lam = lambda as f32;
            d_l.zip_mut_with(&d_l_sup, |a, &g| *a += lam * g);
        }
        if let Some(ext) = external {
            let (ev, eg) = (ext.func)(&l, &s.to_owned());
            ext_sum += ev;
            let w = ext.weight as f32;
            d_l.zip_mut_with(&eg, |a, &g| *a += w * g);
        }
        state.deblur.backward(&trace_d, &d_l, Some(&mut grads), false);
    }
    let inv = 1.0 / batch.len() as f32;
    scale_params(&mut grads, inv);
    let opt = state.optimizer.as_mut().expect("training state carries optimizer");
    opt.deblur.step(&mut state.deblur, &grads, lr);
    let n = batch.len() as f64;
    Ok((l1_sum / n, sup_sum / n, ext_sum / n))
}

/// Reblur sub-step over one batch: recomputes candidate and pseudo-sharp
/// images from the current (already updated) deblur module, detaches them,
/// and applies one Adam update to the reblur parameters. In `ReblurOnly` mode
/// the sharpness-preservation term is dropped, which is the independent
/// blur-reconstruction protocol.
/// Returns (blur, sharp, self) batch means.
pub fn reblur_substep(
    state: &mut TrainState,
    pairs: &[ImagePair],
    batch: &[usize],
    config: &TrainConfig,
    lr: f64,
) -> Result<(f64, f64, f64)> {
    let with_sharp_term = config.mode != TrainMode::ReblurOnly;
    let mut grads = state.reblur.zeros_like();
    let mut blur_sum = 0.0;
    let mut sharp_sum = 0.0;
    let mut self_sum = 0.0;
    for &idx in batch {
        let b_img = pairs[idx].blurry.view();
        let s_img = pairs[idx].sharp.view();
        // detached: plain forward, no trace back into the deblur module
        let l = state.deblur.forward(&b_img)?;
        let (rl, trace_l) = state.reblur.forward_traced(&l.view())?;
        let (blur_val, d_rl) = l1_grad(&rl.view(), &b_img)?;
        blur_sum += blur_val;
        self_sum += l1_distance(&rl.view(), &l.view())?;
        state.reblur.backward(&trace_l, &d_rl, Some(&mut grads), false);
        if with_sharp_term {
            let s_hat = state.deblur.forward(&s_img)?;
            let (rsh, trace_s) = state.reblur.forward_traced(&s_hat.view())?;
            let (sharp_val, d_rsh) = l1_grad(&rsh.view(), &s_hat.view())?;
            sharp_sum += sharp_val;
            state.reblur.backward(&trace_s, &d_rsh, Some(&mut grads), false);
        }
    }
    let inv = 1.0 / batch.len() as f32;
    scale_params(&mut grads, inv);
    let opt = state.optimizer.as_mut().expect("training state carries optimizer");
    opt.reblur.step(&mut state.reblur, &grads, lr);
    let n = batch.len() as f64;
    Ok((blur_sum / n, sharp_sum / n, self_sum / n))
}

/// One full training step on a batch, honoring the configured mode.
pub fn joint_train_step(
    state: &mut TrainState,
    pairs: &[ImagePair],
    batch: &[usize],
    config: &TrainConfig,
    lr: f64,
    external: Option<&ExternalLoss>,
) -> Result<LossReport> {
    let mut report = LossReport::default();
    if config.mode != TrainMode::ReblurOnly {
        let (l1, sup, _ext) = deblur_substep(state, pairs, batch, config, lr, external)?;
        report.l1 = l1;
        report.reblur_sup = sup;
        report.total_d = l1 + config.lambda_reblur * sup;
    }
    if config.mode != TrainMode::DeblurOnly {
        let (blur, sharp, selfv) = reblur_substep(state, pairs, batch, config, lr)?;
        report.blur = blur;
        report.sharp = sharp;
        report.reblur_self = selfv;
        report.total_r = blur + sharp;
    }
    state.step += 1;
    if !report.all_finite() {
        return Err(Error::NonFiniteLoss { step: state.step, term: format!("{report:?}") });
    }
    Ok(report)
}

/// Trains from scratch. See [`train_from`] for resuming.
pub fn train(
    config: &TrainConfig,
    pairs: &[ImagePair],
    outputs: &TrainOutputs,
    external: Option<&ExternalLoss>,
) -> Result<TrainState> {
    let state = init_state(config)?;
    train_from(config, state, pairs, outputs, external)
}

/// Runs epochs `state.epoch .. config.epochs`. Because batch order is a pure
/// function of `(seed, epoch)` and the optimizer state rides along in the
/// checkpoint, resuming reproduces the uninterrupted run bit-exactly.
pub fn train_from(
    config: &TrainConfig,
    mut state: TrainState,
    pairs: &[ImagePair],
    outputs: &TrainOutputs,
    external: Option<&ExternalLoss>,
) -> Result<TrainState> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if state.deblur.config != config.deblur || state.reblur.config != config.reblur {
        return Err(Error::CheckpointMismatch(
            "model configs in state do not match the training config".into(),
        ));
    }
    if state.seed != config.seed {
        return Err(Error::CheckpointMismatch("state seed does not match config seed".into()));
    }

    let mut csv = match &outputs.dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("loss.csv");
            let fresh = state.epoch == 0 || !path.exists();
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            if fresh && f.metadata().map(|m| m.len() == 0).unwrap_or(true) {
                writeln!(f, "{}", LossReport::csv_header()).map_err(|e| Error::io(&path, e))?;
            }
            Some((f, path))
        }
        None => None,
    };

    for epoch in state.epoch..config.epochs {
        let lr = lr_schedule_with(epoch, config.epochs, config.initial_lr, &config.milestones)?;
        for batch in epoch_batches(pairs.len(), config.batch_size, config.seed, epoch)? {
            let report = joint_train_step(&mut state, pairs, &batch, config, lr, external)?;
            if let Some((f, path)) = &mut csv {
                writeln!(f, "{}", report.csv_row(state.step, epoch)).map_err(|e| Error::io(&*path, e))?;
            }
        }
        state.epoch = epoch + 1;
        if let Some(dir) = &outputs.dir {
            let due = outputs.checkpoint_every > 0 && state.epoch % outputs.checkpoint_every == 0;
            if due && state.epoch < config.epochs {
                state.save(dir.join(format!("ckpt_epoch_{:05}.ckpt", state.epoch)))?;
            }
        }
    }
    if let Some(dir) = &outputs.dir {
        state.save(dir.join("final.ckpt"))?;
    }
    Ok(state)
}

/// Mean PSNR of the clipped deblur output against the sharp references.
pub fn eval_deblur_psnr(state: &TrainState, pairs: &[ImagePair]) -> Result<f64> {
    let mut sum = 0.0;
    for pair in pairs {
        let l = state.deblur.forward(&pair.blurry.view())?;
        let img = ImageTensor::new(l)?;
        sum += crate::metrics::psnr(&img, &pair.sharp, 1.0)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Mean PSNR of the reblurred deblur output against the blurry originals.
pub fn eval_reblur_psnr(state: &TrainState, pairs: &[ImagePair]) -> Result<f64> {
    let mut sum = 0.0;
    for pair in pairs {
        let l = state.deblur.forward(&pair.blurry.view())?;
        let rl = state.reblur.forward(&l.view())?;
        let img = ImageTensor::new(rl)?;
        sum += crate::metrics::psnr(&img, &pair.blurry, 1.0)?;
    }
    Ok(sum / pairs.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapacityRow {
    pub resblocks: usize,
    pub deblur_psnr: f64,
    pub reblur_psnr: f64,
}

#[derive(Debug, Clone)]
pub struct CapacitySweepConfig {
    pub deblur_epochs: u64,
    pub reblur_epochs: u64,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub seed: u64,
    pub deblur: DeblurConfig,
    pub reblur: ReblurConfig,
}

/// Capacity study: per ResBlock count, train a deblur module on fidelity loss
/// alone, then an independent reblur module on blur reconstruction alone
/// against the frozen deblur outputs, and measure both PSNRs on the held-out
/// split. Sharper deblurring should show up as lower reblur PSNR.
pub fn capacity_sweep(
    resblock_counts: &[usize],
    train_pairs: &[ImagePair],
    holdout: &[ImagePair],
    config: &CapacitySweepConfig,
) -> Result<Vec<CapacityRow>> {
    let mut rows = Vec::with_capacity(resblock_counts.len());
    for &n in resblock_counts {
        let cfg_d = TrainConfig {
            epochs: config.deblur_epochs,
            batch_size: config.batch_size,
            initial_lr: config.initial_lr,
            lambda_reblur: 0.0,
            seed: config.seed,
            mode: TrainMode::DeblurOnly,
            deblur: DeblurConfig { num_resblocks: n, ..config.deblur.clone() },
            reblur: config.reblur.clone(),
            ..Default::default()
        };
        let trained_d = train(&cfg_d, train_pairs, &TrainOutputs::default(), None)?;

        let cfg_r = TrainConfig {
            epochs: config.reblur_epochs,
            mode: TrainMode::ReblurOnly,
            ..cfg_d.clone()
        };
        let mut state_r = init_state(&cfg_r)?;
        state_r.deblur = trained_d.deblur.clone();
        let trained_r = train_from(&cfg_r, state_r, train_pairs, &TrainOutputs::default(), None)?;

        rows.push(CapacityRow {
            resblocks: n,
            deblur_psnr: eval_deblur_psnr(&trained_r, holdout)?,
            reblur_psnr: eval_reblur_psnr(&trained_r, holdout)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReblurSizeRow {
    pub reblur_resblocks: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Joint training repeated across reblur-module sizes; reports held-out
/// deblur quality per size.
pub fn reblur_size_sweep(
    sizes: &[usize],
    train_pairs: &[ImagePair],
    holdout: &[ImagePair],
    base: &TrainConfig,
) -> Result<Vec<ReblurSizeRow>> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let cfg = TrainConfig {
            mode: TrainMode::Joint,
            reblur: ReblurConfig { num_resblocks: n, ..base.reblur.clone() },
            ..base.clone()
        };
        let state = train(&cfg, train_pairs, &TrainOutputs::default(), None)?;
        let mut psnr_sum = 0.0;
        let mut ssim_sum = 0.0;
        for pair in holdout {
            let l = ImageTensor::new(state.deblur.forward(&pair.blurry.view())?)?;
            psnr_sum += crate::metrics::psnr(&l, &pair.sharp, 1.0)?;
            ssim_sum += crate::metrics::ssim_per_channel(&l, &pair.sharp)?;
        }
        rows.push(ReblurSizeRow {
            reblur_resblocks: n,
            psnr: psnr_sum / holdout.len() as f64,
            ssim: ssim_sum / holdout.len() as f64,
        });
    }
    Ok(rows)
}
