//! Step learning-rate schedule: halve at fixed fractions of total epochs.

use crate::error::{Error, Result};

pub const DEFAULT_MILESTONES: [f64; 3] = [0.5, 0.75, 0.9];

pub fn validate_milestones(milestones: &[f64]) -> Result<()> {
    for w in milestones.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::InvalidConfig("milestones must be strictly increasing".into()));
        }
    }
    if milestones.iter().any(|&m| !(0.0..1.0).contains(&m) || m <= 0.0) {
        return Err(Error::InvalidConfig("milestones must lie in (0, 1)".into()));
    }
    Ok(())
}

/// `initial_lr * 2^(-m)` where `m` counts milestones already reached.
/// Exact halvings, so the values carry no drift.
pub fn lr_schedule_with(epoch: u64, total_epochs: u64, initial_lr: f64, milestones: &[f64]) -> Result<f64> {
    if epoch >= total_epochs {
        return Err(Error::InvalidConfig(format!(
            "epoch {epoch} out of range for {total_epochs} total"
        )));
    }
    if initial_lr <= 0.0 {
        return Err(Error::InvalidConfig("initial_lr must be positive".into()));
    }
    validate_milestones(milestones)?;
    let frac = epoch as f64 / total_epochs as f64;
    let mut lr = initial_lr;
    for &m in milestones {
        if frac >= m {
            lr /= 2.0;
        }
    }
    Ok(lr)
}

pub fn lr_schedule(epoch: u64, total_epochs: u64, initial_lr: f64) -> Result<f64> {
    lr_schedule_with(epoch, total_epochs, initial_lr, &DEFAULT_MILESTONES)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_schedule_values_are_exact() {
        assert_eq!(lr_schedule(0, 4000, 1e-4).unwrap(), 1e-4);
        assert_eq!(lr_schedule(1999, 4000, 1e-4).unwrap(), 1e-4);
        assert_eq!(lr_schedule(2000, 4000, 1e-4).unwrap(), 5e-5);
        assert_eq!(lr_schedule(2999, 4000, 1e-4).unwrap(), 5e-5);
        assert_eq!(lr_schedule(3000, 4000, 1e-4).unwrap(), 2.5e-5);
        assert_eq!(lr_schedule(3599, 4000, 1e-4).unwrap(), 2.5e-5);
        assert_eq!(lr_schedule(3600, 4000, 1e-4).unwrap(), 1.25e-5);
        assert_eq!(lr_schedule(3999, 4000, 1e-4).unwrap(), 1.25e-5);
    }

    #[test]
    fn out_of_range_epoch_rejected() {
        assert!(lr_schedule(4000, 4000, 1e-4).is_err());
    }

    #[test]
    fn bad_milestones_rejected() {
        assert!(lr_schedule_with(0, 10, 1e-4, &[0.5, 0.5]).is_err());
        assert!(lr_schedule_with(0, 10, 1e-4, &[0.0, 0.5]).is_err());
        assert!(lr_schedule_with(0, 10, 1e-4, &[0.5, 1.0]).is_err());
    }
}
