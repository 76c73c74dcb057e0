//! Seed derivation.
//!
//! Every random stream in the crate descends from one user seed. Child
//! seeds are derived by hashing `(parent, stream)` through SplitMix64, so
//! adding replicates or knockoff runs never perturbs the streams of the
//! existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `stream` of `parent`.
pub fn derive(parent: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ stream.wrapping_mul(GOLDEN))
}

/// Named sub-streams, so different consumers of the same seed never
/// collide.
pub mod stream {
    pub const DESIGN: u64 = 1;
    pub const RESPONSE: u64 = 2;
    pub const SUPPORT: u64 = 3;
    pub const KNOCKOFF: u64 = 4;
    pub const FOLDS: u64 = 5;
    pub const REPLICATE: u64 = 6;
    pub const CV_PREDICTION: u64 = 7;
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Counter-based generator for row `row` under `seed`: the draws for a row
/// do not depend on which other rows were generated or in what order.
pub fn row_rng(seed: u64, row: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(row);
    r
}
