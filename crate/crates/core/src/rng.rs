//! Seed plumbing. Every command derives its streams from one root seed so
//! that two methods evaluated on the same seed see the same initial states.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(parent, index)`.
pub fn sub_seed(parent: u64, index: u64) -> u64 {
    mix(mix(parent) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Named streams within one episode.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Sim = 1,
    Policy = 2,
    Training = 3,
    Rhythm = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> SimRng {
    SimRng::seed_from_u64(sub_seed(seed, stream as u64))
}
