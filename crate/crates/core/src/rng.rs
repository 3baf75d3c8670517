//! Seeded generators. Every random decision in the pipeline draws from a
//! ChaCha8 stream keyed by `(seed, stream)` so independent stages never share
//! state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids for pipeline stages.
pub mod streams {
    pub const SPLIT: u64 = 1;
    pub const ALLOCATE_TRAIN: u64 = 2;
    pub const ALLOCATE_VAL: u64 = 3;
    pub const BALANCE: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    /// Synthetic slides use `SYNTH_BASE + slide_index`.
    pub const SYNTH_BASE: u64 = 1 << 32;
}

pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
