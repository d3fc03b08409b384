//! Per-path random streams.
//!
//! Every path draws from its own ChaCha8 stream selected by
//! `(seed, path_index, substream)`. ChaCha is counter based, so a stream can
//! be opened directly without advancing a shared generator, and a batch is
//! bit-identical whatever the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Substreams available to each path.
pub const SUBSTREAMS: u64 = 4;

/// Substream used for driving Brownian increments (and branch selection).
pub const STREAM_B: u64 = 0;
/// Substream for the auxiliary noise of the regularized variance state.
pub const STREAM_Z: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngConfig {
    pub seed: u64,
}

impl RngConfig {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn stream(&self, path_index: u64, substream: u64) -> ChaCha8Rng {
        debug_assert!(substream < SUBSTREAMS);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path_index * SUBSTREAMS + substream);
        rng
    }

    /// A fresh configuration for an independent experiment sharing this seed.
    pub fn derive(&self, tag: u64) -> Self {
        // splitmix64 finalizer
        let mut z = self.seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Self {
            seed: z ^ (z >> 31),
        }
    }
}
