//! Seed derivation for reproducible sub-streams.
//!
//! Scene generation, per-step weight resampling, and parameter init each
//! need their own deterministic RNG stream derived from one master seed.
//! Mixing through splitmix64 keeps nearby (seed, index) pairs uncorrelated.

/// One round of splitmix64.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives the seed for sub-stream `index` of `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}
