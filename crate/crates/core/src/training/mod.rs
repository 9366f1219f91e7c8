//! Optimizers, learning-rate schedule, and the training loops.

pub mod adam;
pub mod schedule;
pub mod trainer;

pub use adam::Adam;
pub use schedule::{lr_schedule, lr_schedule_with, DEFAULT_MILESTONES};
pub use trainer::{
    capacity_sweep, init_state, joint_train_step, reblur_size_sweep, train, train_from,
    CapacityRow, CapacitySweepConfig, ExternalLoss, ReblurSizeRow, TrainConfig, TrainMode,
    TrainOutputs, TrainState,
};
