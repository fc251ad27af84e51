//! Seed derivation.
//!
//! `hash64(a, b)` is the SplitMix64 finalizer applied to
//! `splitmix(a) ^ (b + 1) * 0x9E3779B97F4A7C15`. It is fixed: changing it
//! changes every derived task and worker seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit mix of a base seed and an index.
pub fn hash64(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_add(1).wrapping_mul(GOLDEN))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable() {
        // frozen values: any change here breaks reproducibility of saved runs
        assert_eq!(hash64(0, 0), hash64(0, 0));
        assert_ne!(hash64(42, 0), hash64(42, 1));
        assert_ne!(hash64(42, 0), hash64(43, 0));
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
    }
}
