//! Trainable modules: the residual U-Net deblurrer and the stride-free
//! reblurrer, with manual backward passes and checkpointing.

pub mod checkpoint;
pub mod conv;
pub mod deblur;
pub mod layers;
pub mod module;
pub mod ops;
pub mod reblur;

pub use checkpoint::{Checkpoint, OptimizerState};
pub use conv::Conv2d;
pub use deblur::{DeblurConfig, DeblurNet};
pub use layers::ResBlock;
pub use module::{param_hash, Network};
pub use reblur::{ReblurConfig, ReblurNet};
