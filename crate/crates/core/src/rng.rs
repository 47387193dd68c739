//! Seeded random streams.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` whose seed is a
//! pure function of a master seed and a path of stream indices, so results
//! never depend on thread scheduling or on which other streams were used.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream labels used when deriving child seeds. Keeping them in one place
/// avoids accidental reuse of a stream for two purposes.
pub mod stream {
    pub const PROBLEM: u64 = 0x5052_4f42;
    pub const INIT: u64 = 0x494e_4954;
    pub const SHARD: u64 = 0x5348_5244;
    pub const SGD: u64 = 0x0053_4744;
    pub const DCSGD: u64 = 0x4443_5347;
    pub const FONE: u64 = 0x464f_4e45;
    pub const TUNE: u64 = 0x5455_4e45;
    pub const INFERENCE: u64 = 0x494e_4645;
    pub const RANDOM_INIT: u64 = 0x524e_4449;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `index` under `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(index.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

pub fn rng_from_seed(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
