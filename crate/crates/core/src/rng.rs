//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a base seed and a stream label, so results never depend on call
//! order across independent streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream))
}

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

// Stream labels. Kept distinct so that adding a consumer never shifts another.
pub(crate) const STREAM_SPLIT: u64 = 0x5350_4c49;
pub(crate) const STREAM_TARGET_ONLY: u64 = 0x5441_5247;
pub(crate) const STREAM_GEN_CLASSES: u64 = 0x4743_4c53;
pub(crate) const STREAM_GEN_ASSET: u64 = 0x4741_5354;
pub(crate) const STREAM_CONTEXT_FIT: u64 = 0x4354_4654;
pub(crate) const STREAM_CONTEXT_PROJ: u64 = 0x4350_524a;
pub(crate) const STREAM_PSEUDO_INIT: u64 = 0x5053_4954;
pub(crate) const STREAM_ROLE_INIT: u64 = 0x524f_4c45;
pub(crate) const STREAM_MODEL_INIT: u64 = 0x4d4f_444c;
pub(crate) const STREAM_SHUFFLE: u64 = 0x5348_5546;
pub(crate) const STREAM_GRADCHECK: u64 = 0x4752_4443;
