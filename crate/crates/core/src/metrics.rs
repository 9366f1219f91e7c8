//! Image quality metrics, the residual-kernel diagnostic, and evaluation
//! reports.

use crate::data::kernel::BlurKernel;
use crate::data::synth::ImagePair;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::models::checkpoint::Checkpoint;
use crate::models::module::Network;
use ndarray::{Array1, Array2};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// `10 * log10(peak^2 / MSE)`; identical images report +infinity.
pub fn psnr(a: &ImageTensor, b: &ImageTensor, peak: f64) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::shape(
            format!("{:?}", a.view().shape()),
            format!("{:?}", b.view().shape()),
        ));
    }
    let mse: f64 = a
        .view()
        .iter()
        .zip(b.view().iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.view().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Valid-mode separable filtering with a 1-D window applied along both axes.
fn filter_valid(img: &Array2<f64>, win: &[f64]) -> Array2<f64> {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let t = win.len();
    let mut rows = Array2::<f64>::zeros((h, w - t + 1));
    for y in 0..h {
        for x in 0..w - t + 1 {
            let mut acc = 0.0;
            for (i, &wv) in win.iter().enumerate() {
                acc += wv * img[[y, x + i]];
            }
            rows[[y, x]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h - t + 1, w - t + 1));
    for y in 0..h - t + 1 {
        for x in 0..w - t + 1 {
            let mut acc = 0.0;
            for (i, &wv) in win.iter().enumerate() {
                acc += wv * rows[[y + i, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Structural similarity measured on each channel separately with an 11x11
/// Gaussian window (sigma 1.5) and averaged over the three channels.
pub fn ssim_per_channel(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::shape(
            format!("{:?}", a.view().shape()),
            format!("{:?}", b.view().shape()),
        ));
    }
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidImage(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let win = gaussian_window();
    let c1 = (SSIM_K1 * 1.0_f64).powi(2);
    let c2 = (SSIM_K2 * 1.0_f64).powi(2);
    let mut total = 0.0;
    for ch in 0..3 {
        let xa = a.view().index_axis_move(ndarray::Axis(0), ch).mapv(|v| v as f64);
        let xb = b.view().index_axis_move(ndarray::Axis(0), ch).mapv(|v| v as f64);
        let mu_a = filter_valid(&xa, &win);
        let mu_b = filter_valid(&xb, &win);
        let m_aa = filter_valid(&(&xa * &xa), &win);
        let m_bb = filter_valid(&(&xb * &xb), &win);
        let m_ab = filter_valid(&(&xa * &xb), &win);
        let mut acc = 0.0;
        let n = mu_a.len() as f64;
        for i in 0..mu_a.shape()[0] {
            for j in 0..mu_a.shape()[1] {
                let (ua, ub) = (mu_a[[i, j]], mu_b[[i, j]]);
                let va = m_aa[[i, j]] - ua * ua;
                let vb = m_bb[[i, j]] - ub * ub;
                let vab = m_ab[[i, j]] - ua * ub;
                acc += ((2.0 * ua * ub + c1) * (2.0 * vab + c2))
                    / ((ua * ua + ub * ub + c1) * (va + vb + c2));
            }
        }
        total += acc / n;
    }
    Ok(total / 3.0)
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn to_gray(img: &ImageTensor) -> Array2<f64> {
    let (h, w) = img.dims();
    let v = img.view();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[[y, x]] =
                LUMA[0] * v[[0, y, x]] as f64 + LUMA[1] * v[[1, y, x]] as f64 + LUMA[2] * v[[2, y, x]] as f64;
        }
    }
    out
}

fn fft2(data: &mut Array2<Complex<f64>>, inverse: bool) {
    let (h, w) = (data.shape()[0], data.shape()[1]);
    let mut planner = FftPlanner::new();
    let row_fft = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    for mut row in data.rows_mut() {
        row_fft.process(row.as_slice_mut().expect("contiguous row"));
    }
    let col_fft = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    let mut buf = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            buf[y] = data[[y, x]];
        }
        col_fft.process(&mut buf);
        for y in 0..h {
            data[[y, x]] = buf[y];
        }
    }
    if inverse {
        let scale = 1.0 / (h * w) as f64;
        data.mapv_inplace(|v| v * scale);
    }
}

fn half_cosine_window(n: usize, taper: usize) -> Array1<f64> {
    let mut w = Array1::from_elem(n, 1.0);
    for i in 0..taper.min(n / 2) {
        let v = 0.5 * (1.0 - (std::f64::consts::PI * (i as f64 + 0.5) / taper as f64).cos());
        w[i] = v;
        w[n - 1 - i] = v;
    }
    w
}

/// Estimates the residual blur kernel relating a candidate image to its
/// blurry source: regularized least squares over horizontal and vertical
/// derivative images, solved by frequency-domain division. The derivative
/// fields are cropped away from the padded border and tapered to zero before
/// the transform. The regularizer scales with the mean spectral power of the
/// candidate, so the estimate is invariant to a common positive rescaling of
/// both images. Output is clipped to nonnegative weights and normalized.
pub fn estimate_residual_kernel(
    l: &ImageTensor,
    b: &ImageTensor,
    ksize: usize,
    eps: f64,
) -> Result<BlurKernel> {
    if !l.same_shape(b) {
        return Err(Error::shape(
            format!("{:?}", l.view().shape()),
            format!("{:?}", b.view().shape()),
        ));
    }
    if ksize % 2 == 0 || ksize == 0 {
        return Err(Error::InvalidKernel(format!("kernel size {ksize} must be odd")));
    }
    if eps < 0.0 {
        return Err(Error::InvalidConfig("eps must be nonnegative".into()));
    }
    let gl = to_gray(l);
    let gb = to_gray(b);
    let mean = gl.sum() / gl.len() as f64;
    let var = gl.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / gl.len() as f64;
    if var < 1e-12 {
        return Err(Error::DegenerateInput("constant candidate image".into()));
    }

    let (h, w) = (gl.shape()[0], gl.shape()[1]);
    let r = ksize / 2;
    // derivative grids are (h-1, w-1); drop the border band the padding touched
    if h < 2 * r + ksize + 2 || w < 2 * r + ksize + 2 {
        return Err(Error::InvalidImage(format!(
            "image {h}x{w} too small to estimate a {ksize}x{ksize} kernel"
        )));
    }
    let (ch, cw) = (h - 1 - 2 * r, w - 1 - 2 * r);
    let taper = 8usize.min(ch / 4).min(cw / 4).max(1);
    let wy = half_cosine_window(ch, taper);
    let wx = half_cosine_window(cw, taper);

    let mut num = Array2::<Complex<f64>>::zeros((ch, cw));
    let mut den = Array2::<f64>::zeros((ch, cw));
    for axis in 0..2 {
        let mut dl = Array2::<Complex<f64>>::zeros((ch, cw));
        let mut db = Array2::<Complex<f64>>::zeros((ch, cw));
        for y in 0..ch {
            for x in 0..cw {
                let (sy, sx) = (y + r, x + r);
                let (dl_v, db_v) = if axis == 0 {
                    (gl[[sy, sx + 1]] - gl[[sy, sx]], gb[[sy, sx + 1]] - gb[[sy, sx]])
                } else {
                    (gl[[sy + 1, sx]] - gl[[sy, sx]], gb[[sy + 1, sx]] - gb[[sy, sx]])
                };
                let win = wy[y] * wx[x];
                dl[[y, x]] = Complex::new(dl_v * win, 0.0);
                db[[y, x]] = Complex::new(db_v * win, 0.0);
            }
        }
        fft2(&mut dl, false);
        fft2(&mut db, false);
        for ((n, &fl), &fb) in num.iter_mut().zip(dl.iter()).zip(db.iter()) {
            *n += fb.conj() * fl;
        }
        for (d, &fl) in den.iter_mut().zip(dl.iter()) {
            *d += fl.norm_sqr();
        }
    }

    let eps_abs = eps * den.sum() / den.len() as f64;
    let mut fk = Array2::<Complex<f64>>::zeros((ch, cw));
    for ((k, &n), &d) in fk.iter_mut().zip(num.iter()).zip(den.iter()) {
        *k = n / (d + eps_abs);
    }
    fft2(&mut fk, true);

    let mut weights = Array2::<f64>::zeros((ksize, ksize));
    for dy in -(r as isize)..=r as isize {
        for dx in -(r as isize)..=r as isize {
            let y = dy.rem_euclid(ch as isize) as usize;
            let x = dx.rem_euclid(cw as isize) as usize;
            weights[[(dy + r as isize) as usize, (dx + r as isize) as usize]] =
                fk[[y, x]].re.max(0.0);
        }
    }
    BlurKernel::normalized(weights)
        .map_err(|_| Error::DegenerateInput("estimated kernel has no positive mass".into()))
}

/// Zero-mean normalized cross-correlation between two kernels of equal size.
pub fn kernel_ncc(a: &BlurKernel, b: &BlurKernel) -> Result<f64> {
    if a.size() != b.size() {
        return Err(Error::shape(a.size(), b.size()));
    }
    let n = (a.size() * a.size()) as f64;
    let ma = a.weights().sum() / n;
    let mb = b.weights().sum() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.weights().iter().zip(b.weights().iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::DegenerateInput("constant kernel in correlation".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidConfig("spearman needs two equal-length series".into()));
    }
    let rank = |vals: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..vals.len()).collect();
        idx.sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap());
        let mut ranks = vec![0.0; vals.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && vals[idx[j + 1]] == vals[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                ranks[k] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let ra = rank(xs);
    let rb = rank(ys);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in ra.iter().zip(rb.iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}

/// Named, pure metric supplied from outside (learned-metric plug-in slot).
pub struct ExternalMetric {
    pub name: String,
    #[allow(clippy::type_complexity)]
    pub func: Box<dyn Fn(&ImageTensor, &ImageTensor) -> f64 + Send + Sync>,
}

#[derive(Debug, Clone)]
pub struct MetricRow {
    pub id: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub extras: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_extras: Vec<(String, f64)>,
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<MetricRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean_psnr = rows.iter().map(|r| r.psnr_db).sum::<f64>() / n;
        let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        let mut mean_extras = Vec::new();
        if let Some(first) = rows.first() {
            for (i, (name, _)) in first.extras.iter().enumerate() {
                let mean = rows.iter().map(|r| r.extras[i].1).sum::<f64>() / n;
                mean_extras.push((name.clone(), mean));
            }
        }
        Self { rows, mean_psnr, mean_ssim, mean_extras }
    }

    pub fn to_csv(&self) -> String {
        let mut header = String::from("id,psnr_db,ssim");
        if let Some(first) = self.rows.first() {
            for (name, _) in &first.extras {
                header.push(',');
                header.push_str(name);
            }
        }
        let mut out = header;
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{},{},{}", row.id, row.psnr_db, row.ssim));
            for (_, v) in &row.extras {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out.push_str(&format!("mean,{},{}", self.mean_psnr, self.mean_ssim));
        for (_, v) in &self.mean_extras {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
        out
    }
}

/// Runs the deblur module over every pair and reports per-image and mean
/// metrics, with any registered external metrics in the extras columns.
pub fn evaluate(
    checkpoint: &Checkpoint,
    pairs: &[ImagePair],
    external: &[ExternalMetric],
) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for (id, pair) in pairs.iter().enumerate() {
        let l = ImageTensor::new(checkpoint.deblur.forward(&pair.blurry.view())?)?;
        let psnr_db = psnr(&l, &pair.sharp, 1.0)?;
        let ssim = ssim_per_channel(&l, &pair.sharp)?;
        let extras = external
            .iter()
            .map(|m| (m.name.clone(), (m.func)(&l, &pair.sharp)))
            .collect();
        rows.push(MetricRow { id, psnr_db, ssim, extras });
    }
    Ok(MetricsReport::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::clean::generate_clean;
    use crate::data::kernel::{apply_blur, make_motion_kernel};
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;

    fn rand_pair(h: usize, w: usize) -> (ImageTensor, ImageTensor) {
        (generate_clean(h.max(w), 31), generate_clean(h.max(w), 32))
    }

    #[test]
    fn psnr_of_identical_images_is_infinite_and_symmetric() {
        let (a, b) = rand_pair(32, 32);
        assert!(psnr(&a, &a, 1.0).unwrap().is_infinite());
        assert_abs_diff_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn psnr_uniform_offset_matches_closed_form() {
        // 16/256 is exactly representable in f32, so the closed form is exact
        let base = Array3::from_elem((3, 16, 16), 0.5_f32);
        let offset = base.mapv(|v| v + 16.0 / 256.0);
        let a = ImageTensor::new(base).unwrap();
        let b = ImageTensor::new(offset).unwrap();
        let expect = 20.0 * (256.0_f64 / 16.0).log10();
        assert_abs_diff_eq!(psnr(&a, &b, 1.0).unwrap(), expect, epsilon = 1e-9);

        // the 8-bit-style offset carries f32 input quantization (~1e-6 dB)
        let offset255 = Array3::from_elem((3, 16, 16), 0.5_f32 + 16.0 / 255.0);
        let c = ImageTensor::new(offset255).unwrap();
        let expect255 = 20.0 * (255.0_f64 / 16.0).log10();
        assert_abs_diff_eq!(psnr(&a, &c, 1.0).unwrap(), expect255, epsilon = 1e-5);
    }

    #[test]
    fn ssim_identity_is_one_and_symmetric() {
        let (a, b) = rand_pair(32, 32);
        assert_abs_diff_eq!(ssim_per_channel(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            ssim_per_channel(&a, &b).unwrap(),
            ssim_per_channel(&b, &a).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = ImageTensor::zeros(8, 8);
        assert!(ssim_per_channel(&a, &a).is_err());
    }

    #[test]
    fn residual_kernel_recovers_known_motion() {
        let img = generate_clean(96, 41);
        let k = make_motion_kernel(5.0, 0.6, 9).unwrap();
        let blurred = apply_blur(&img, &k).unwrap();
        let est = estimate_residual_kernel(&img, &blurred, 9, 1e-4).unwrap();
        let ncc = kernel_ncc(&est, &k).unwrap();
        assert!(ncc > 0.99, "ncc {ncc}");
    }

    #[test]
    fn residual_kernel_identity_is_delta() {
        let img = generate_clean(96, 43);
        let est = estimate_residual_kernel(&img, &img, 9, 1e-5).unwrap();
        assert!(est.weights()[[4, 4]] > 0.95, "center {}", est.weights()[[4, 4]]);
        assert_abs_diff_eq!(est.weights().sum(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn residual_kernel_scale_consistency() {
        let img = generate_clean(64, 44);
        let k = make_motion_kernel(4.0, 1.2, 7).unwrap();
        let blurred = apply_blur(&img, &k).unwrap();
        let est1 = estimate_residual_kernel(&img, &blurred, 7, 1e-4).unwrap();
        let scale = 0.5_f32;
        let img_s = ImageTensor::new(img.array() * scale).unwrap();
        let blur_s = ImageTensor::new(blurred.array() * scale).unwrap();
        let est2 = estimate_residual_kernel(&img_s, &blur_s, 7, 1e-4).unwrap();
        for (a, b) in est1.weights().iter().zip(est2.weights().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn residual_kernel_degrades_with_eps() {
        let img = generate_clean(80, 45);
        let k = make_motion_kernel(5.5, 0.9, 9).unwrap();
        let blurred = apply_blur(&img, &k).unwrap();
        let mut prev = f64::INFINITY;
        for eps in [1e-4, 3e-2, 1.0] {
            let est = estimate_residual_kernel(&img, &blurred, 9, eps).unwrap();
            let ncc = kernel_ncc(&est, &k).unwrap();
            assert!(ncc < prev, "eps {eps}: ncc {ncc} vs prev {prev}");
            prev = ncc;
        }
    }

    #[test]
    fn constant_candidate_is_degenerate() {
        let flat = ImageTensor::new(Array3::from_elem((3, 32, 32), 0.5)).unwrap();
        let img = generate_clean(32, 46);
        assert!(matches!(
            estimate_residual_kernel(&flat, &img, 5, 1e-4),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn spearman_handles_perfect_and_inverse_orderings() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let up = [2.0, 3.0, 5.0, 9.0];
        let down = [4.0, 3.0, 2.0, 1.0];
        assert_abs_diff_eq!(spearman(&a, &up).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(spearman(&a, &down).unwrap(), -1.0, epsilon = 1e-12);
    }
}
