//! Counter-based seed splitting.
//!
//! A child seed is a word of the ChaCha20 keystream keyed by the master seed,
//! with the stream id derived from the label and the word position from the
//! run index. Distinct `(index, label)` pairs address disjoint keystream
//! positions, so the children behave as independent streams.

use rand::{RngCore, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};

/// FNV-1a over the label bytes; stable across platforms and builds.
fn label_stream(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn child_seed(master: u64, index: u64, label: &str) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(master);
    rng.set_stream(label_stream(label));
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

/// Generator used throughout the crate.
pub type Rng = ChaCha8Rng;

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(master: u64, index: u64, label: &str) -> Rng {
    rng_from(child_seed(master, index, label))
}
