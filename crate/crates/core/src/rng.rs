//! Deterministic random substreams.
//!
//! Every random draw in a search is taken from a generator keyed by
//! `(master seed, iteration, phase)`, so two engine variants that make
//! different decisions still consume independent, reproducible randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SearchRng = ChaCha8Rng;

/// Phase tags for substream derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Phase {
    Selection = 1,
    Candidates = 2,
    DualLookahead = 3,
    Successor = 4,
    Rollout = 5,
    Penalty = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes an arbitrary list of words into one 64-bit seed.
pub fn derive_seed(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

pub fn substream(seed: u64, iteration: u64, phase: Phase) -> SearchRng {
    SearchRng::seed_from_u64(derive_seed(&[seed, iteration, phase as u64]))
}

pub fn seeded(seed: u64) -> SearchRng {
    SearchRng::seed_from_u64(seed)
}
