//! Seeded random streams.
//!
//! Every stochastic component takes an explicit generator. Substreams are
//! derived from integer tuples so that parallel consumers stay reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with an ordered list of stream identifiers.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, path))
}

/// Well-known stream tags, kept distinct so that, e.g., changing the mask
/// ratio never perturbs which rays get sampled.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const SCENE_PICK: u64 = 2;
    pub const IMAGE_MASK: u64 = 3;
    pub const POINT_MASK: u64 = 4;
    pub const RAYS: u64 = 5;
    pub const RAY_POINTS: u64 = 6;
    pub const EVAL: u64 = 7;
    pub const SUITE: u64 = 8;
    pub const VIEW_PICK: u64 = 9;
}
