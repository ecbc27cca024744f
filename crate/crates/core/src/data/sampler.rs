use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::Slide;
use crate::rng;
use crate::{Error, Result};

/// One epoch of batches over a single slide: spot indices shuffled by
/// `seed` and cut into batches of `batch_size`; the short tail is dropped.
pub fn batch_sampler(slide: &Slide, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    epoch_batches(slide.spot_num(), batch_size, seed)
}

pub fn epoch_batches(spot_num: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::invalid(
            "batch_size",
            format!("contrastive batches need at least 2 pairs, got {batch_size}"),
        ));
    }
    if batch_size > spot_num {
        return Err(Error::invalid(
            "batch_size",
            format!("{batch_size} exceeds the slide's {spot_num} spots"),
        ));
    }
    let mut order: Vec<usize> = (0..spot_num).collect();
    order.shuffle(&mut rng::stream(seed, &[]));
    Ok(order
        .chunks_exact(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_arithmetic() {
        let b = epoch_batches(10, 4, 3).unwrap();
        assert_eq!(b.len(), 2);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 8);
    }

    #[test]
    fn deterministic_by_seed() {
        assert_eq!(
            epoch_batches(50, 8, 9).unwrap(),
            epoch_batches(50, 8, 9).unwrap()
        );
        assert_ne!(
            epoch_batches(50, 8, 9).unwrap(),
            epoch_batches(50, 8, 10).unwrap()
        );
    }

    #[test]
    fn full_batch_is_a_permutation() {
        let b = epoch_batches(7, 7, 1).unwrap();
        assert_eq!(b.len(), 1);
        let mut v = b[0].clone();
        v.sort_unstable();
        assert_eq!(v, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(epoch_batches(10, 1, 0).is_err());
        assert!(epoch_batches(10, 11, 0).is_err());
    }
}
