//! Counter-keyed random streams.
//!
//! Every draw in the lab comes from a ChaCha8 stream addressed by
//! `(seed, lane, branch)` for the key and the step index for the stream
//! number. A trajectory therefore never depends on how work is scheduled
//! across threads, and a branch of the conditional Monte Carlo can redraw
//! step `k` without replaying anything.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as StreamRng;

/// Branch index reserved for the main path of a trajectory.
pub const MAIN_BRANCH: u64 = 0;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key of a family of streams; one stream per step index.
#[derive(Debug, Clone)]
pub struct StreamFamily {
    proto: ChaCha8Rng,
}

impl StreamFamily {
    pub fn new(seed: u64, lane: u64, branch: u64) -> Self {
        let mut h = seed;
        for word in [lane, branch] {
            let mut w = word;
            h = splitmix64(&mut h) ^ splitmix64(&mut w);
        }
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut h).to_le_bytes());
        }
        Self {
            proto: ChaCha8Rng::from_seed(key),
        }
    }

    /// Stream dedicated to `step`.
    pub fn stream(&self, step: u64) -> ChaCha8Rng {
        let mut rng = self.proto.clone();
        rng.set_stream(step);
        rng
    }
}

/// Convenience: the stream for `(seed, lane, step, branch)`.
pub fn stream(seed: u64, lane: u64, step: u64, branch: u64) -> ChaCha8Rng {
    StreamFamily::new(seed, lane, branch).stream(step)
}
