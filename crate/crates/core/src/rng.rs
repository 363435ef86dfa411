//! Seed derivation.
//!
//! All randomness flows from a root `u64` seed. Child streams (per
//! trajectory, per fold, per epoch) are derived with [`mix_seed`] so that a
//! serial run and a parallel run draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type Rng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One round of the splitmix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the sub-seed for stream `index` of `seed`.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(GOLDEN_GAMMA))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Generator for stream `index` under `seed`.
pub fn sub_rng(seed: u64, index: u64) -> Rng {
    rng_from_seed(mix_seed(seed, index))
}
