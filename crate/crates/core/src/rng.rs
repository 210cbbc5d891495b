//! Deterministic random streams.
//!
//! Every random decision in the pipeline is derived from a 64-bit seed and a
//! set of integer coordinates (annotator id, item id, stage label, ...) by a
//! splitmix-style mixing function. Draws therefore do not depend on the order
//! in which work is scheduled, so results are identical for any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a seed together with an ordered list of coordinates.
pub fn key(seed: u64, coords: &[u64]) -> u64 {
    let mut h = mix64(seed ^ GOLDEN);
    for (i, &c) in coords.iter().enumerate() {
        h = mix64(h ^ mix64(c.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1))));
    }
    h
}

/// Uniform draw in `[0, 1)` addressed by `(seed, coords)`.
#[inline]
pub fn uniform(seed: u64, coords: &[u64]) -> f64 {
    const SCALE: f64 = (1u64 << 53) as f64;
    (key(seed, coords) >> 11) as f64 / SCALE
}

/// FNV-1a over a label, used to turn stage names into stable coordinates.
pub fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Sub-seed for a named pipeline stage.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    key(seed, &[label_hash(stage)])
}

/// A seeded sequential generator addressed by `(seed, coords)`.
pub fn stream(seed: u64, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key(seed, coords))
}
