//! Seed derivation.
//!
//! Every random stream in the engine is a ChaCha8 generator keyed by
//! `(global seed, stream tag, id)`. Nothing reads OS entropy, so a run is
//! fully reproducible from its seed, and per-item streams make results
//! independent of processing order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags. Two streams with different tags never share a key.
pub mod stream {
    pub const PHANTOM: u64 = 0x5048_414e;
    pub const COHORT: u64 = 0x434f_484f;
    pub const TRAIN_VIEWS: u64 = 0x5452_5657;
    pub const TEST_VIEWS: u64 = 0x5445_5657;
    pub const BALANCE: u64 = 0x4241_4c41;
    pub const INIT: u64 = 0x494e_4954;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const DROPCONNECT: u64 = 0x4452_4f50;
    pub const FOLDS: u64 = 0x464f_4c44;
    pub const SUBSET: u64 = 0x5355_4253;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a seed, a stream tag and an item id into a 64-bit sub-seed.
pub fn derive_seed(seed: u64, stream: u64, id: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ id)
}

pub fn rng_for(seed: u64, stream: u64, id: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream, id))
}
