//! Self-supervised test-time adaptation: per-image refinement of the deblur
//! parameters by plain gradient descent on the self-supervised reblur
//! distance with the reblur module frozen, followed by per-channel histogram
//! matching back to the initial output's color distribution.

use crate::data::synth::ImagePair;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::{l1_distance, l1_grad};
use crate::metrics::{psnr, ssim_per_channel};
use crate::models::checkpoint::Checkpoint;
use crate::models::module::{axpy_params, Network};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TTAConfig {
    /// Number of adaptation steps (0 short-circuits).
    pub steps: usize,
    /// Plain gradient-descent learning rate.
    pub lr: f64,
    pub histogram_bins: usize,
}

impl Default for TTAConfig {
    fn default() -> Self {
        Self { steps: 5, lr: 3e-6, histogram_bins: 256 }
    }
}

impl TTAConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::InvalidConfig("tta lr must be positive".into()));
        }
        if self.histogram_bins < 2 {
            return Err(Error::InvalidConfig("histogram_bins must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TTAResult {
    /// Final adapted image (histogram-matched to the initial output).
    pub adapted: ImageTensor,
    /// The initial deblurred image, before any adaptation.
    pub initial: ImageTensor,
    /// Self-supervised loss at every step, `steps + 1` values including the
    /// starting point.
    pub self_loss: Vec<f64>,
}

fn channel_cdf(channel: &[f32], bins: usize) -> Vec<f64> {
    let mut hist = vec![0u64; bins];
    for &v in channel {
        let idx = ((v.clamp(0.0, 1.0) as f64) * bins as f64) as usize;
        hist[idx.min(bins - 1)] += 1;
    }
    let total = channel.len() as f64;
    let mut cdf = Vec::with_capacity(bins);
    let mut acc = 0u64;
    for h in hist {
        acc += h;
        cdf.push(acc as f64 / total);
    }
    cdf
}

/// Per-channel monotone intensity remap of `source` so its empirical CDF
/// matches `reference`'s within quantization. Values map to bin centers, so
/// the output lives in `[0, 1]`.
pub fn histogram_match(source: &ImageTensor, reference: &ImageTensor, bins: usize) -> ImageTensor {
    let (h, w) = source.dims();
    let mut out = Array3::<f32>::zeros((3, h, w));
    for ch in 0..3 {
        let src: Vec<f32> = source.view().index_axis(ndarray::Axis(0), ch).iter().copied().collect();
        let rf: Vec<f32> =
            reference.view().index_axis(ndarray::Axis(0), ch).iter().copied().collect();
        let cdf_s = channel_cdf(&src, bins);
        let cdf_r = channel_cdf(&rf, bins);
        // monotone bin-to-bin map: smallest reference bin whose CDF reaches ours
        let mut map = vec![0usize; bins];
        let mut j = 0usize;
        for (i, m) in map.iter_mut().enumerate() {
            while j < bins - 1 && cdf_r[j] < cdf_s[i] {
                j += 1;
            }
            *m = j;
        }
        let mut plane = out.index_axis_mut(ndarray::Axis(0), ch);
        for (o, &v) in plane.iter_mut().zip(src.iter()) {
            let idx = (((v.clamp(0.0, 1.0) as f64) * bins as f64) as usize).min(bins - 1);
            *o = ((map[idx] as f64 + 0.5) / bins as f64) as f32;
        }
    }
    ImageTensor::new(out).expect("bin centers are in range")
}

/// Runs the adaptation loop on one blurry image. The deblur parameters are a
/// fresh copy per call (no cross-image carryover) and the reblur module is
/// never touched.
pub fn adapt(blurry: &ImageTensor, checkpoint: &Checkpoint, config: &TTAConfig) -> Result<TTAResult> {
    config.validate()?;
    let mut deblur = checkpoint.deblur.clone();
    let reblur = &checkpoint.reblur;
    let lr = -(config.lr as f32);

    let l0 = deblur.forward(&blurry.view())?;
    let mut self_loss = Vec::with_capacity(config.steps + 1);

    if config.steps == 0 {
        let r0 = reblur.forward(&l0.view())?;
        self_loss.push(l1_distance(&r0.view(), &l0.view())?);
        let initial = ImageTensor::new(l0)?;
        return Ok(TTAResult { adapted: initial.clone(), initial, self_loss });
    }

    for step in 0..config.steps {
        let (l, trace_d) = deblur.forward_traced(&blurry.view())?;
        let (rl, trace_r) = reblur.forward_traced(&l.view())?;
        // the reference branch is the detached value of the current output
        let (value, d_rl) = l1_grad(&rl.view(), &l.view())?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { step: step as u64, term: "self-supervised reblur".into() });
        }
        self_loss.push(value);
        let d_l = reblur.backward(&trace_r, &d_rl, None, true).expect("want_dx");
        let mut grads = deblur.zeros_like();
        deblur.backward(&trace_d, &d_l, Some(&mut grads), false);
        axpy_params(&mut deblur, lr, &grads);
    }

    let l_final = deblur.forward(&blurry.view())?;
    let r_final = reblur.forward(&l_final.view())?;
    self_loss.push(l1_distance(&r_final.view(), &l_final.view())?);

    let initial = ImageTensor::new(l0)?;
    let final_img = ImageTensor::new(l_final)?;
    let adapted = histogram_match(&final_img, &initial, config.histogram_bins);
    Ok(TTAResult { adapted, initial, self_loss })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TTASweepRow {
    pub steps: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub self_loss: f64,
}

/// Distortion-vs-sharpness trade-off data: adapts every image once up to the
/// largest requested step count, snapshotting metrics at each listed count.
/// The gradient trajectory is shared, so each row equals a standalone run
/// with that step budget.
pub fn tta_sweep(
    pairs: &[ImagePair],
    checkpoint: &Checkpoint,
    step_counts: &[usize],
    config: &TTAConfig,
) -> Result<Vec<TTASweepRow>> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts = step_counts.to_vec();
    counts.sort_unstable();
    counts.dedup();
    let max_steps = counts.last().copied().unwrap_or(0);

    let mut acc: std::collections::BTreeMap<usize, (f64, f64, f64)> = Default::default();
    for pair in pairs {
        let mut deblur = checkpoint.deblur.clone();
        let reblur = &checkpoint.reblur;
        let lr = -(config.lr as f32);
        let l0_arr = deblur.forward(&pair.blurry.view())?;
        let l0 = ImageTensor::new(l0_arr.clone())?;
        for step in 0..=max_steps {
            if counts.contains(&step) {
                let l = if step == 0 { l0_arr.clone() } else { deblur.forward(&pair.blurry.view())? };
                let rl = reblur.forward(&l.view())?;
                let self_v = l1_distance(&rl.view(), &l.view())?;
                let img = if step == 0 {
                    l0.clone()
                } else {
                    histogram_match(&ImageTensor::new(l)?, &l0, config.histogram_bins)
                };
                let e = acc.entry(step).or_insert((0.0, 0.0, 0.0));
                e.0 += psnr(&img, &pair.sharp, 1.0)?;
                e.1 += ssim_per_channel(&img, &pair.sharp)?;
                e.2 += self_v;
            }
            if step == max_steps {
                break;
            }
            let (l, trace_d) = deblur.forward_traced(&pair.blurry.view())?;
            let (rl, trace_r) = reblur.forward_traced(&l.view())?;
            let (_, d_rl) = l1_grad(&rl.view(), &l.view())?;
            let d_l = reblur.backward(&trace_r, &d_rl, None, true).expect("want_dx");
            let mut grads = deblur.zeros_like();
            deblur.backward(&trace_d, &d_l, Some(&mut grads), false);
            axpy_params(&mut deblur, lr, &grads);
        }
    }

    let n = pairs.len() as f64;
    Ok(counts
        .into_iter()
        .map(|steps| {
            let (p, s, v) = acc[&steps];
            TTASweepRow { steps, psnr: p / n, ssim: s / n, self_loss: v / n }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::clean::generate_clean;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;

    #[test]
    fn matching_to_self_is_identity_up_to_quantization() {
        let img = generate_clean(32, 51);
        let out = histogram_match(&img, &img, 256);
        for (a, b) in img.view().iter().zip(out.view().iter()) {
            assert!((a - b).abs() <= 1.0 / 256.0, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_histograms_map_to_reference_level() {
        let src = ImageTensor::new(Array3::from_elem((3, 8, 8), 0.2)).unwrap();
        let rf = ImageTensor::new(Array3::from_elem((3, 8, 8), 0.8)).unwrap();
        let out = histogram_match(&src, &rf, 256);
        for v in out.view().iter() {
            assert!((v - 0.8).abs() <= 1.0 / 256.0, "{v}");
        }
    }

    #[test]
    fn matching_preserves_pixel_order_within_channels() {
        let src = generate_clean(24, 52);
        let rf = generate_clean(24, 53);
        let out = histogram_match(&src, &rf, 256);
        let sv = src.view();
        let ov = out.view();
        for ch in 0..3 {
            for i in 0..24 * 24 {
                for j in (i + 1)..(i + 5).min(24 * 24) {
                    let (y1, x1) = (i / 24, i % 24);
                    let (y2, x2) = (j / 24, j % 24);
                    let a = sv[[ch, y1, x1]];
                    let b = sv[[ch, y2, x2]];
                    if a < b {
                        assert!(ov[[ch, y1, x1]] <= ov[[ch, y2, x2]] + 1e-7);
                    }
                }
            }
        }
    }

    fn noise_image(size: usize, seed: u64) -> ImageTensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut arr = Array3::<f32>::zeros((3, size, size));
        for v in arr.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        ImageTensor::new(arr).unwrap()
    }

    #[test]
    fn matched_cdf_close_to_reference_cdf() {
        // spread-out histograms: every bin holds ~1/bins of the mass
        let src = noise_image(128, 54);
        let rf = noise_image(128, 55);
        let bins = 256usize;
        let out = histogram_match(&src, &rf, bins);
        for ch in 0..3 {
            let get = |t: &ImageTensor| -> Vec<f32> {
                t.view().index_axis(ndarray::Axis(0), ch).iter().copied().collect()
            };
            let co = channel_cdf(&get(&out), bins);
            let cr = channel_cdf(&get(&rf), bins);
            // Kolmogorov-Smirnov distance computed directly from the CDFs
            let ks = co
                .iter()
                .zip(cr.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            assert!(ks <= 2.0 / bins as f64 + 1e-9, "channel {ch}: ks {ks}");
        }
    }

    #[test]
    fn matched_means_stay_close() {
        let src = noise_image(128, 56);
        let rf = noise_image(128, 57);
        let out = histogram_match(&src, &rf, 256);
        for ch in 0..3 {
            let mean = |t: &ImageTensor| -> f64 {
                let v: Vec<f32> =
                    t.view().index_axis(ndarray::Axis(0), ch).iter().copied().collect();
                v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64
            };
            assert_abs_diff_eq!(mean(&out), mean(&rf), epsilon = 2.0 / 256.0);
        }
    }
}
