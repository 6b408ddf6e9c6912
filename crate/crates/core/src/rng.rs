//! Deterministic seed streams. Every random quantity in the crate is drawn
//! from a ChaCha8 generator whose seed is derived from a master seed and a
//! path of stream identifiers, so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of `(master, ids…)`.
pub fn derive_seed(master: u64, ids: &[u64]) -> u64 {
    ids.iter().fold(splitmix64(master), |acc, &id| {
        splitmix64(acc ^ splitmix64(id.wrapping_add(0x632b_e59b_d9b4_e019)))
    })
}

pub fn stream(master: u64, ids: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn streams_are_distinct_and_stable() {
        let mut seen = HashSet::new();
        for a in 0..50u64 {
            for b in 0..50u64 {
                assert!(seen.insert(derive_seed(7, &[a, b])));
            }
        }
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
    }
}
