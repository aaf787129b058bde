//! Seed derivation for reproducible, order-independent random streams.
//!
//! Every consumer of randomness (population generation, each Monte Carlo
//! replicate, each sub-step inside a replicate) gets its own ChaCha stream
//! whose seed is a hash of the master seed and a stream label. Results are
//! therefore independent of scheduling and of how many threads run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream label for finite-population generation.
pub const POPULATION_STREAM: u64 = 0x504f_5055_4c41_5449;
/// Base label for replicate streams; the replicate index is mixed in.
pub const REPLICATE_STREAM: u64 = 0x5245_504c_4943_4154;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a master seed and a sequence of labels into a child seed.
pub fn derive_seed(master: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(master), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn rng_from_seed(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG for the `index`-th replicate of a study seeded with `master`.
pub fn replicate_rng(master: u64, index: usize) -> StreamRng {
    rng_from_seed(derive_seed(master, &[REPLICATE_STREAM, index as u64]))
}

/// Seed for a named sub-stream of a replicate (sampling, panel, ...).
pub fn replicate_substream(master: u64, index: usize, sub: u64) -> u64 {
    derive_seed(master, &[REPLICATE_STREAM, index as u64, sub])
}

pub fn population_seed(master: u64) -> u64 {
    derive_seed(master, &[POPULATION_STREAM])
}
