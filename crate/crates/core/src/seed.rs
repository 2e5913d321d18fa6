//! Deterministic seed derivation.
//!
//! Every stochastic component takes an explicit `u64` seed. Sub-streams
//! (bootstrap resamples, corruption trials, arena battles) derive their own
//! seed from `(master, index)` so results do not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere in the crate.
pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a stream index into an independent seed.
pub fn derive(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_mul(GOLDEN).wrapping_add(0x5EED)))
}

/// Builds the crate's generator from a seed.
pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Component stream identifiers used when one master seed feeds several
/// stochastic stages.
pub mod stream {
    pub const BOOTSTRAP: u64 = 1;
    pub const CORRUPTION: u64 = 2;
    pub const ARENA: u64 = 3;
    pub const SYNTHETIC: u64 = 4;
    pub const TRACES: u64 = 5;
}
