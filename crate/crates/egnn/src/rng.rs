//! Deterministic derivation of independent random streams.
//!
//! Every random choice in the crate flows through a stream derived from a
//! base seed plus a tag path (domain constant, then indices such as
//! iteration, batch element, layer, neuron). Two different tag paths give
//! independent streams, so parallel workers can draw noise in any order and
//! whole runs stay pure functions of `(inputs, seed)`.
//!
//! The mixing function folds each tag into the state with the SplitMix64
//! finalizer; the final state seeds a ChaCha8 stream.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

pub const DOMAIN_INIT: u64 = 1;
pub const DOMAIN_SCHEDULE: u64 = 2;
pub const DOMAIN_FEEDFORWARD: u64 = 3;
pub const DOMAIN_BACKPROP: u64 = 4;
pub const DOMAIN_EVAL: u64 = 5;
pub const DOMAIN_NORM_ESTIMATE: u64 = 6;
pub const DOMAIN_REPEAT: u64 = 7;
pub const DOMAIN_SPLIT: u64 = 8;
pub const DOMAIN_SYNTHETIC: u64 = 9;

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a tag path into a single stream seed.
pub fn mix_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(seed);
    for &t in tags {
        state = splitmix64(state ^ t.wrapping_mul(0xA24B_AED4_963E_E407));
    }
    state
}

/// Independent ChaCha8 stream for `(seed, tags)`.
pub fn derive_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, tags))
}
