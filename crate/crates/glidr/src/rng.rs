//! Deterministic seed derivation.
//!
//! Every source of randomness in the toolkit is a ChaCha stream seeded from
//! a base seed plus a purpose tag, so independent components (weight init,
//! batch sampling, tie-breaking, ...) never share or reuse a stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a base seed with a purpose tag and a list of ids into a fresh seed.
pub fn derive_seed(base: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut acc = splitmix64(base ^ 0x6c62_272e_07bb_0142);
    for b in tag.bytes() {
        acc = splitmix64(acc ^ u64::from(b));
    }
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}

/// A seeded RNG for the given purpose.
pub fn rng_for(base: u64, tag: &str, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag, parts))
}
