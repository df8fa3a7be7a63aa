//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit [`SimRng`]. Independent work
//! items (trajectories, rollouts, repetitions) get their own stream derived
//! from a master seed, so results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finaliser applied to `seed` combined with `index`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream number `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> SimRng {
    rng_from_seed(derive_seed(seed, index))
}
