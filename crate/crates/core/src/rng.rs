//! Seed derivation.
//!
//! Every random quantity in the crate comes from an explicit `u64` seed. Sub
//! seeds for independent streams (DAG, layout, episodes, trials, policy) are
//! derived with SplitMix64, and each stream is driven by ChaCha8 seeded through
//! `SeedableRng::seed_from_u64`. Both algorithms are fully specified, so a port
//! to another language reproduces the same instances.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One step of SplitMix64. Advances `state` and returns the mixed output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named sub-streams. The discriminant is mixed into the parent seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Dag = 1,
    Layout = 2,
    Episode = 3,
    Noise = 4,
    Trial = 5,
    Policy = 6,
    Start = 7,
}

/// Derive the seed of `stream` from `seed`, optionally indexed (episode
/// number, trial number, ...).
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    let mut state = seed ^ (stream as u64).wrapping_mul(GOLDEN_GAMMA);
    let first = splitmix64(&mut state);
    let mut state = first ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    splitmix64(&mut state)
}

pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}
