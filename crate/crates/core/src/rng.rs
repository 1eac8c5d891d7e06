//! Seed splitting.
//!
//! Every random stream in a run derives from one root seed:
//!
//! ```text
//! stream_seed   = split_seed(root, STREAM_*)
//! sample_seed   = split_seed(stream_seed(MONTE_CARLO), sample_index)
//! iteration_rng = split_seed(stream_seed(ACQUISITION), iteration)
//! ```
//!
//! `split_seed` is two rounds of SplitMix64, so neighbouring indices give
//! uncorrelated ChaCha8 streams, and the draws of sample `i` do not depend on
//! how many samples are requested.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Monte-Carlo perturbations of the seed-train simulation.
pub const STREAM_MONTE_CARLO: u64 = 1;
/// Initial Latin hypercube design.
pub const STREAM_LHS: u64 = 2;
/// Per-iteration acquisition sampling and multi-start points.
pub const STREAM_ACQUISITION: u64 = 3;
/// Restart points of GP hyperparameter fitting.
pub const STREAM_GP: u64 = 4;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn split_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(split_seed(seed, stream))
}
