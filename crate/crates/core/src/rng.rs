//! Seeded random number generation and seed splitting.
//!
//! Every sampler in the crate takes an explicit `u64` seed. Work that is split
//! into batches derives one child seed per batch with [`child_seed`], so results
//! do not depend on how many worker threads execute the batches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic child seed for batch `index` of a computation seeded with `parent`.
pub fn child_seed(parent: u64, index: u64) -> u64 {
    mix64(mix64(parent ^ 0x9e37_79b9_7f4a_7c15).wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Number of samples handled by one parallel batch.
pub(crate) const BATCH: usize = 1 << 14;

/// Split `n` into `(batch_index, batch_len)` pairs of at most [`BATCH`] items.
pub(crate) fn batches(n: usize) -> Vec<(u64, usize)> {
    let mut out = Vec::with_capacity(n / BATCH + 1);
    let mut left = n;
    let mut i = 0u64;
    while left > 0 {
        let len = left.min(BATCH);
        out.push((i, len));
        left -= len;
        i += 1;
    }
    out
}
