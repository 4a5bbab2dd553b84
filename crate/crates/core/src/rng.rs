//! Seed plumbing. Every stochastic draw in the crate goes through a
//! `ChaCha8Rng` seeded from a `u64`; sub-streams are split off by hashing a
//! (seed, stream, index) triple so that adding draws to one stream never
//! perturbs another.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent child seed for `(stream, index)` under `seed`.
pub fn derive(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ stream.wrapping_mul(0xA076_1D64_78BD_642F)) ^ index)
}

/// Named streams, so call sites never collide by accident.
pub mod stream {
    pub const WORLD: u64 = 1;
    pub const EMBEDDING: u64 = 2;
    pub const GEN_INIT: u64 = 3;
    pub const GEN_TRAIN: u64 = 4;
    pub const GEN_SAMPLE: u64 = 5;
    pub const CLF_INIT: u64 = 6;
    pub const CLF_TRAIN: u64 = 7;
    pub const DROPOUT: u64 = 8;
    pub const SELECT: u64 = 9;
    pub const OPT: u64 = 10;
    pub const AUDIT: u64 = 11;
    pub const HELDOUT: u64 = 12;
    pub const SUBSAMPLE: u64 = 13;
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normals(rng: &mut Rng, n: usize) -> alloc::vec::Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

pub fn uniform(rng: &mut Rng) -> f64 {
    rng.random::<f64>()
}

pub fn below(rng: &mut Rng, n: usize) -> usize {
    rng.random_range(0..n)
}

/// Fisher-Yates shuffle of `0..n`.
pub fn permutation(rng: &mut Rng, n: usize) -> alloc::vec::Vec<usize> {
    let mut idx: alloc::vec::Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_separates_streams() {
        assert_ne!(derive(7, 1, 0), derive(7, 2, 0));
        assert_ne!(derive(7, 1, 0), derive(7, 1, 1));
        assert_eq!(derive(7, 1, 3), derive(7, 1, 3));
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut r = rng(3);
        let mut p = permutation(&mut r, 50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<alloc::vec::Vec<_>>());
    }
}
