//! Counter-based seed derivation.
//!
//! `master_seed → occasion seed → per-module stream seed`, each step a
//! SplitMix64 finalizer over `(parent, counter)`. Streams are addressed by
//! fixed identifiers, so enabling one consumer (say, an attacker) never
//! shifts the draws another consumer sees for the same occasion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for every stochastic draw in the crate.
pub type SimRng = ChaCha8Rng;

/// Fixed stream identifiers within one occasion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Payload = 1,
    Noise = 2,
    Attacker = 3,
    Nonce = 4,
    Tamper = 5,
    Key = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed `counter` of `parent`.
pub fn derive(parent: u64, counter: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ counter.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn occasion_seed(master_seed: u64, occasion: u64) -> u64 {
    derive(master_seed, occasion)
}

pub fn stream_seed(occasion_seed: u64, stream: Stream) -> u64 {
    derive(occasion_seed, stream as u64)
}

pub fn rng_from(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn streams_are_distinct() {
        let occ = occasion_seed(42, 0);
        let seeds: HashSet<u64> = [Stream::Payload, Stream::Noise, Stream::Attacker, Stream::Nonce]
            .into_iter()
            .map(|s| stream_seed(occ, s))
            .collect();
        assert_eq!(seeds.len(), 4);
    }

    #[test]
    fn derivation_is_pure() {
        assert_eq!(occasion_seed(7, 3), occasion_seed(7, 3));
        assert_ne!(occasion_seed(7, 3), occasion_seed(7, 4));
        assert_ne!(occasion_seed(7, 3), occasion_seed(8, 3));
    }
}
