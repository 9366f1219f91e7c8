//! Deterministic shuffled batching.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Index batches for one pass over `len` items: shuffled by `(seed, epoch)`,
/// split into `batch_size` chunks, last partial batch retained.
pub fn epoch_batches(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(epoch));
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// Streams shuffled index batches epoch after epoch.
pub struct BatchIterator {
    len: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    queue: std::collections::VecDeque<Vec<usize>>,
}

impl BatchIterator {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        // validate eagerly so an empty dataset fails at construction
        epoch_batches(len, batch_size, seed, 0)?;
        Ok(Self { len, batch_size, seed, epoch: 0, queue: Default::default() })
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

impl Iterator for BatchIterator {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.queue.is_empty() {
            let batches = epoch_batches(self.len, self.batch_size, self.seed, self.epoch)
                .expect("validated at construction");
            self.queue.extend(batches);
            self.epoch += 1;
        }
        self.queue.pop_front()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_sizes_split_with_partial_tail() {
        let batches = epoch_batches(10, 3, 1, 0).unwrap();
        let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        let mut all: Vec<usize> = batches.into_iter().flatten().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn identical_seeds_identical_order() {
        assert_eq!(epoch_batches(16, 4, 9, 3).unwrap(), epoch_batches(16, 4, 9, 3).unwrap());
    }

    #[test]
    fn different_seeds_differ() {
        // three items are enough per the overwhelming-probability contract,
        // but use a few more to keep this deterministic check meaningful
        let a = epoch_batches(8, 8, 1, 0).unwrap();
        let b = epoch_batches(8, 8, 2, 0).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn different_epochs_differ() {
        let a = epoch_batches(8, 8, 1, 0).unwrap();
        let b = epoch_batches(8, 8, 1, 1).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(epoch_batches(0, 2, 1, 0).is_err());
        assert!(BatchIterator::new(0, 2, 1).is_err());
    }

    #[test]
    fn iterator_crosses_epochs() {
        let it = BatchIterator::new(5, 2, 7).unwrap();
        let batches: Vec<_> = it.take(6).collect();
        assert_eq!(batches.iter().map(|b| b.len()).sum::<usize>(), 10);
    }
}
