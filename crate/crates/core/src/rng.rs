//! Seeded random streams.
//!
//! Every stochastic routine takes a 64-bit seed. Parallel work derives one
//! ChaCha20 stream per work item from `(seed, index)`, so results do not depend
//! on how items are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Rng = ChaCha20Rng;

/// Generator for stream 0 of `seed`.
pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Generator for work item `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derive an independent child seed, used when one seeded call fans out into
/// several seeded sub-calls.
pub fn child_seed(seed: u64, tag: u64) -> u64 {
    use rand::RngCore;
    let mut rng = stream(seed, tag.wrapping_add(1 << 40));
    rng.next_u64()
}
