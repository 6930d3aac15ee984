//! Seeded random streams.
//!
//! A stream is a ChaCha8 generator keyed by a 64-bit seed and positioned on a
//! 64-bit stream id, so independent consumers (population draw, partition,
//! chain) can share one replicate seed without sharing a sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids used by the library. Consumers outside the crate may use any
/// other id.
pub mod streams {
    pub const POPULATION: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const CHAIN: u64 = 3;
    pub const INIT: u64 = 4;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}
