//! Synthetic blurry/sharp pair generation and the on-disk dataset format.
//!
//! A dataset directory holds paired PNGs plus `manifest.json`; the manifest
//! (file names, kernel parameters, seed) is the source of truth, and kernels
//! are regenerated from their stored parameters on load.

use crate::data::kernel::{apply_blur, make_motion_kernel, BlurKernel};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Aligned (blurry, sharp) sample; synthetic pairs keep their true kernel.
#[derive(Debug, Clone)]
pub struct ImagePair {
    pub blurry: ImageTensor,
    pub sharp: ImageTensor,
    pub kernel: Option<BlurKernel>,
}

impl ImagePair {
    pub fn new(blurry: ImageTensor, sharp: ImageTensor, kernel: Option<BlurKernel>) -> Result<Self> {
        if !blurry.same_shape(&sharp) {
            return Err(Error::shape(
                format!("{:?}", sharp.view().shape()),
                format!("{:?}", blurry.view().shape()),
            ));
        }
        Ok(Self { blurry, sharp, kernel })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub source_dir: PathBuf,
    /// Square crop side in pixels.
    pub patch_size: usize,
    /// Motion length drawn uniformly from this closed range (pixels).
    pub kernel_length_range: [f64; 2],
    /// Odd kernel side.
    pub kernel_size: usize,
    pub seed: u64,
    /// Number of pairs to emit.
    pub count: usize,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::InvalidConfig("patch_size must be positive".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel_size {} must be odd",
                self.kernel_size
            )));
        }
        if self.patch_size < self.kernel_size {
            return Err(Error::InvalidConfig(format!(
                "patch_size {} smaller than kernel_size {}",
                self.patch_size, self.kernel_size
            )));
        }
        let [lo, hi] = self.kernel_length_range;
        if !(0.0 <= lo && lo <= hi && hi <= self.kernel_size as f64) {
            return Err(Error::InvalidConfig(format!(
                "kernel_length_range [{lo}, {hi}] outside [0, {}]",
                self.kernel_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelParams {
    pub length: f64,
    pub angle: f64,
    pub size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairEntry {
    pub id: usize,
    pub blurry: String,
    pub sharp: String,
    pub kernel: KernelParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config: DatasetConfig,
    pub pairs: Vec<PairEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

fn list_source_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptySource(dir.to_path_buf()));
    }
    Ok(paths)
}

struct PairDraw {
    source_index: usize,
    top: usize,
    left: usize,
    length: f64,
    angle: f64,
}

/// One RNG stream drives every random choice, in a fixed order per pair, so
/// the emitted pairs are a pure function of the config.
fn draw_pairs(config: &DatasetConfig, sources: &[(PathBuf, (usize, usize))]) -> Result<Vec<PairDraw>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let [lo, hi] = config.kernel_length_range;
    let mut draws = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let source_index = i % sources.len();
        let (h, w) = sources[source_index].1;
        let top = rng.gen_range(0..=h - config.patch_size);
        let left = rng.gen_range(0..=w - config.patch_size);
        let length = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let angle = rng.gen_range(0.0..std::f64::consts::PI);
        draws.push(PairDraw { source_index, top, left, length, angle });
    }
    Ok(draws)
}

/// Deterministically synthesizes `config.count` pairs in memory.
///
/// Both images of each pair are snapped to the 8-bit grid, so the in-memory
/// dataset is identical to what `write_dataset` + `load_dataset` round-trips.
pub fn synthesize_dataset(config: &DatasetConfig) -> Result<Vec<ImagePair>> {
    Ok(synthesize_with_entries(config)?.0)
}

fn synthesize_with_entries(config: &DatasetConfig) -> Result<(Vec<ImagePair>, Vec<PairEntry>)> {
    config.validate()?;
    let paths = list_source_images(&config.source_dir)?;
    let mut sources = Vec::with_capacity(paths.len());
    for p in &paths {
        let img = ImageTensor::load_png(p)?;
        let (h, w) = img.dims();
        if h < config.patch_size || w < config.patch_size {
            return Err(Error::InvalidConfig(format!(
                "source image {} is {h}x{w}, smaller than patch_size {}",
                p.display(),
                config.patch_size
            )));
        }
        sources.push((img, (h, w)));
    }
    let dims: Vec<(PathBuf, (usize, usize))> = paths
        .iter()
        .cloned()
        .zip(sources.iter().map(|s| s.1))
        .collect();
    let draws = draw_pairs(config, &dims)?;

    let mut pairs = Vec::with_capacity(config.count);
    let mut entries = Vec::with_capacity(config.count);
    for (i, d) in draws.iter().enumerate() {
        let sharp = sources[d.source_index].0.crop(d.top, d.left, config.patch_size)?;
        let kernel = make_motion_kernel(d.length, d.angle, config.kernel_size)?;
        let blurry = apply_blur(&sharp, &kernel)?.quantized();
        entries.push(PairEntry {
            id: i,
            blurry: format!("pair_{i:05}_b.png"),
            sharp: format!("pair_{i:05}_s.png"),
            kernel: KernelParams { length: d.length, angle: d.angle, size: config.kernel_size },
        });
        pairs.push(ImagePair::new(blurry, sharp, Some(kernel))?);
    }
    Ok((pairs, entries))
}

/// Synthesizes and persists a dataset directory, returning its manifest.
pub fn write_dataset(config: &DatasetConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (pairs, entries) = synthesize_with_entries(config)?;
    for (pair, entry) in pairs.iter().zip(&entries) {
        pair.blurry.save_png(out_dir.join(&entry.blurry))?;
        pair.sharp.save_png(out_dir.join(&entry.sharp))?;
    }
    let manifest = DatasetManifest { seed: config.seed, config: config.clone(), pairs: entries };
    let path = out_dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Loads a dataset from its manifest; kernels come back from their stored
/// parameters bit-exactly.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Vec<ImagePair>> {
    let manifest_path = manifest_path.as_ref();
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let mut pairs = Vec::with_capacity(manifest.pairs.len());
    for entry in &manifest.pairs {
        let blurry = ImageTensor::load_png(dir.join(&entry.blurry))?;
        let sharp = ImageTensor::load_png(dir.join(&entry.sharp))?;
        let kernel = make_motion_kernel(entry.kernel.length, entry.kernel.angle, entry.kernel.size)?;
        pairs.push(ImagePair::new(blurry, sharp, Some(kernel))?);
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::clean::write_clean_images;

    fn demo_config(dir: &Path, count: usize) -> DatasetConfig {
        DatasetConfig {
            source_dir: dir.to_path_buf(),
            patch_size: 32,
            kernel_length_range: [1.0, 5.0],
            kernel_size: 9,
            seed: 77,
            count,
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        write_clean_images(dir.path(), 3, 48, 1).unwrap();
        let cfg = demo_config(dir.path(), 6);
        let a = synthesize_dataset(&cfg).unwrap();
        let b = synthesize_dataset(&cfg).unwrap();
        assert_eq!(a.len(), 6);
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.blurry, pb.blurry);
            assert_eq!(pa.sharp, pb.sharp);
        }
    }

    #[test]
    fn zero_motion_range_gives_identical_pairs() {
        let dir = tempfile::tempdir().unwrap();
        write_clean_images(dir.path(), 2, 40, 2).unwrap();
        let mut cfg = demo_config(dir.path(), 4);
        cfg.kernel_length_range = [0.0, 0.0];
        for pair in synthesize_dataset(&cfg).unwrap() {
            assert_eq!(pair.blurry, pair.sharp);
        }
    }

    #[test]
    fn round_trip_matches_memory_and_kernel_reproduces_blurry() {
        let dir = tempfile::tempdir().unwrap();
        write_clean_images(dir.path().join("src"), 2, 48, 3).unwrap();
        let cfg = DatasetConfig { source_dir: dir.path().join("src"), ..demo_config(dir.path(), 5) };
        let out = dir.path().join("ds");
        write_dataset(&cfg, &out).unwrap();
        let mem = synthesize_dataset(&cfg).unwrap();
        let disk = load_dataset(out.join(MANIFEST_NAME)).unwrap();
        assert_eq!(mem.len(), disk.len());
        for (m, d) in mem.iter().zip(&disk) {
            assert_eq!(m.blurry, d.blurry);
            assert_eq!(m.sharp, d.sharp);
            // stored kernel regenerates the blurry image exactly
            let k = d.kernel.as_ref().unwrap();
            let reblurred = apply_blur(&d.sharp, k).unwrap().quantized();
            assert_eq!(reblurred, d.blurry);
        }
    }

    #[test]
    fn empty_source_and_small_images_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("empty")).unwrap();
        let cfg = DatasetConfig { source_dir: dir.path().join("empty"), ..demo_config(dir.path(), 2) };
        assert!(matches!(synthesize_dataset(&cfg), Err(Error::EmptySource(_))));

        write_clean_images(dir.path().join("tiny"), 1, 16, 4).unwrap();
        let cfg = DatasetConfig { source_dir: dir.path().join("tiny"), ..demo_config(dir.path(), 2) };
        assert!(synthesize_dataset(&cfg).is_err());
    }
}
