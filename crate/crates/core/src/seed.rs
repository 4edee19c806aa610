//! Seed derivation shared by every stage.
//!
//! Component seeds are the master seed XOR a fixed per-component constant, so
//! any stage can be rerun on its own. Per-item seeds (one image, one fold) mix
//! the component seed with the item index through SplitMix64.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const MODEL1: u64 = 0x6d6f_6465_6c31_0001;
pub const MODEL2: u64 = 0x6d6f_6465_6c32_0002;
pub const POOL: u64 = 0x706f_6f6c_0000_0003;
pub const EVAL_SAMPLE: u64 = 0x6576_616c_0000_0004;
pub const DETECTION: u64 = 0x6465_7465_6374_0005;
pub const FOLDS: u64 = 0x666f_6c64_0000_0006;
pub const GENERALIZATION: u64 = 0x6765_6e65_7200_0007;
pub const SUBSET: u64 = 0x7375_6273_6574_0008;

pub fn component(master: u64, constant: u64) -> u64 {
    master ^ constant
}

/// SplitMix64 finalizer over `seed + index * golden`.
pub fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
