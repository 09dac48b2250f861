//! Deterministic stream splitting.
//!
//! Every randomized routine takes one `u64` seed and derives independent
//! generators per (domain, index) pair. Parallel loops give each work item
//! the stream of its own index, so results never depend on how items are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DOMAIN_ENV: u64 = 0x0001;
pub const DOMAIN_GAMMA: u64 = 0x0002;
pub const DOMAIN_WALK: u64 = 0x0003;
pub const DOMAIN_TUBE: u64 = 0x0004;
pub const DOMAIN_SIM: u64 = 0x0005;
pub const DOMAIN_CONDITIONS: u64 = 0x0006;

/// SplitMix64 finalizer; full avalanche on 64 bits.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed. Distinct (domain, index) pairs give statistically
/// independent child seeds under the same root seed.
pub fn child_seed(seed: u64, domain: u64, index: u64) -> u64 {
    let mut z = seed;
    z = splitmix(z ^ domain.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    z = splitmix(z ^ index);
    z
}

/// Generator for one work item.
pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(seed, domain, index))
}
