//! Seed plumbing shared by every randomized component.
//!
//! All randomness in the crate flows through [`ChaCha20Rng`] streams seeded
//! from a single `u64`, so a run is reproducible from the seeds echoed in its
//! outputs. Sub-seeds are derived by mixing the master seed with a string tag
//! (and optionally an index), which keeps independent consumers (init,
//! shuffling, noise draws) on disjoint streams without threading RNG state
//! between them.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
pub use rand_chacha::ChaCha20Rng;

/// FNV-1a hash of a byte string; stable across platforms.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// splitmix64 finalizer; decorrelates nearby inputs.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a sub-seed from a master seed and a purpose tag.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(tag.as_bytes()))
}

/// Derives an indexed sub-seed (per epoch, per repetition, ...).
pub fn derive_seed_indexed(seed: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive_seed(seed, tag).wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Seeded RNG for a given purpose.
pub fn seeded(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Standard Laplace draw (location 0, scale 1) via the inverse CDF, which
/// keeps the byte stream -> sample mapping portable across platforms.
pub fn sample_laplace<R: Rng>(rng: &mut R) -> f64 {
    // u in [0, 1); nudge 0 away so ln() stays finite.
    let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    if u < 0.5 {
        (2.0 * u).ln()
    } else {
        -(2.0 * (1.0 - u)).ln()
    }
}
