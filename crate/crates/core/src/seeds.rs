//! Derivation of independent, reproducible RNG streams.
//!
//! Every randomized stage draws from a stream keyed by the run seed, a
//! stream tag, and the item indices it covers. Results are therefore
//! independent of evaluation order and of how work is split over threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_BACKGROUND: u64 = 1;
pub const STREAM_CANARY: u64 = 2;
pub const STREAM_INJECT: u64 = 3;
pub const STREAM_MARKOV: u64 = 4;
pub const STREAM_EMBED: u64 = 5;
pub const STREAM_DECODE: u64 = 6;
pub const STREAM_GAME: u64 = 7;
pub const STREAM_SHUFFLE: u64 = 8;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a root seed with stream/item identifiers into a single 64-bit seed.
pub fn mix(root: u64, parts: &[u64]) -> u64 {
    let mut state = root;
    let mut out = splitmix64(&mut state);
    for &part in parts {
        state ^= part.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        out ^= splitmix64(&mut state);
    }
    out
}

/// RNG for the stream identified by `(root, parts)`.
pub fn stream_rng(root: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(root, parts))
}
