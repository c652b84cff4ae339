//! Seeded random streams.
//!
//! Every stochastic operation draws from ChaCha8 (`rand_chacha::ChaCha8Rng`),
//! a counter-based stream cipher generator. A `u64` seed is expanded with
//! `SeedableRng::seed_from_u64`. Independent sub-streams are obtained by
//! mixing the parent seed with a stream label through SplitMix64
//! ([`derive_seed`]), so a recursion branch or an experiment cell always sees
//! the same numbers regardless of evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sub-stream `stream` under `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}
