//! Deterministic seed derivation.
//!
//! A single master seed fans out to per-stage seeds through a fixed,
//! documented hash so that stages can be re-run independently and still
//! reproduce the exact numbers of a full run. The scheme is:
//!
//! ```text
//! stage_seed = splitmix64( master ^ fnv1a64(tag) )
//! ```
//!
//! with FNV-1a over the UTF-8 bytes of the tag and one splitmix64
//! finalization round. Both primitives are fixed here and never depend on
//! platform or library versions.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives the seed for a named stage from the master seed.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    splitmix64(master ^ fnv1a64(tag.as_bytes()))
}

/// The seeded RNG used everywhere in the workbench.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
