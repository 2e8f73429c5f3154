//! Reproducible random streams.
//!
//! Every replicate draws from its own ChaCha8 stream keyed by
//! `(seed, replicate)`. ChaCha is a counter-based generator, so streams are
//! independent of scheduling and a parallel run reproduces a serial one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, replicate: u64) -> StreamRng {
    lane(seed, replicate, 0)
}

/// Words reserved for each lane of a stream.
const LANE_WORDS: u128 = 1 << 60;

/// Sub-stream `lane` (< 16) of `(seed, replicate)`: the same ChaCha stream
/// started `lane · 2⁶⁰` words in, so lanes never overlap in practice.
pub fn lane(seed: u64, replicate: u64, lane: u8) -> StreamRng {
    assert!(lane < 16, "lane {lane} out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng.set_word_pos(LANE_WORDS * lane as u128);
    rng
}
