//! Deterministic seed derivation so every sub-component gets its own stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a stream label.
pub fn derive(parent: u64, label: &str) -> u64 {
    label
        .bytes()
        .fold(mix(parent), |acc, b| mix(acc ^ u64::from(b)))
}

pub fn rng(parent: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(parent, label))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct_and_stable() {
        assert_eq!(derive(7, "corpus"), derive(7, "corpus"));
        assert_ne!(derive(7, "corpus"), derive(7, "split"));
        assert_ne!(derive(7, "corpus"), derive(8, "corpus"));
    }
}
