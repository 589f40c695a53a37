//! Counter-based seed derivation.
//!
//! Every random stream in a run is keyed by the root seed plus a short path of
//! integers (stream tag, model index, prompt index, ...). Streams are therefore
//! independent of evaluation order, which keeps parallel generation reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub mod tag {
    pub const PROMPTS: u64 = 0x5052_4f4d;
    pub const CANDIDATES: u64 = 0x4341_4e44;
    pub const TARGET_CANDIDATES: u64 = 0x5441_5247;
    pub const REGENERATE: u64 = 0x5245_4745;
    pub const SPLIT: u64 = 0x5350_4c54;
    pub const BATCHES: u64 = 0x4241_5443;
    pub const EVAL: u64 = 0x4556_414c;
    pub const ENSEMBLE: u64 = 0x454e_534d;
    pub const ORACLE: u64 = 0x4f52_434c;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(root: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, path))
}
