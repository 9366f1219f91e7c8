//! Image representation, synthetic motion-blur data, and batching.

pub mod batch;
pub mod clean;
pub mod kernel;
pub mod synth;

pub use batch::{epoch_batches, BatchIterator};
pub use kernel::{apply_blur, make_motion_kernel, BlurKernel};
pub use synth::{
    load_dataset, synthesize_dataset, write_dataset, DatasetConfig, DatasetManifest, ImagePair,
};
