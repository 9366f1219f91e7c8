//! Reblurring-loss image deblurring at desk scale.
//!
//! The crate pairs a deblurring module with a blur-amplifying reblurring
//! module. Training alternates between them: the deblurrer minimizes a
//! fidelity term plus the distance between the reblurred candidate and the
//! reblurred reference, while the reblurrer learns to rebuild the original
//! blur and to leave (pseudo-)sharp images alone. At inference the frozen
//! reblurrer drives reference-free per-image adaptation.
//!
//! Everything is deterministic given a seed: dataset synthesis, batching,
//! training, evaluation, and adaptation.

pub mod data;
pub mod error;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod scalar;
pub mod training;
pub mod tta;

pub use error::{Error, Result};
pub use image::ImageTensor;
