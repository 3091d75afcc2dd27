//! Deterministic seed derivation.
//!
//! Corpus generation and sweep cells run independently, each from a seed
//! derived from a master seed and an index, so work can be parallelized or
//! re-run out of order without changing a single output byte.

/// SplitMix64 finalizer; full-period avalanche over u64.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive combiner; `combine(a, b) != combine(b, a)`.
fn combine(h: u64, x: u64) -> u64 {
    mix(h ^ mix(x).wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2))
}

/// Stable per-item seed from a master seed and item index.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    combine(mix(master), index)
}

/// Two-level derivation for retry loops and nested streams.
pub fn derive_seed2(master: u64, index: u64, sub: u64) -> u64 {
    combine(derive_seed(master, index), sub)
}
