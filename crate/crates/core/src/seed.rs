//! Deterministic seed derivation.
//!
//! Every random stream in a run (client sampling, each client's minibatches in
//! each round, data generation, system-parameter draws) gets its own seed
//! derived from the run seed and a tag path. Streams therefore do not depend
//! on execution order, which keeps parallel and sequential runs identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng(seed: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(seed, tags))
}

// Stream tags.
pub const DATA: u64 = 1;
pub const SYSTEM: u64 = 2;
pub const SAMPLING: u64 = 3;
pub const LOCAL: u64 = 4;
pub const HOLDOUT: u64 = 5;
pub const PILOT_UNIFORM: u64 = 6;
pub const PILOT_WEIGHTED: u64 = 7;
pub const G_INIT: u64 = 8;
