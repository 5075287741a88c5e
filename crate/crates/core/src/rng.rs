//! Seeded random streams.
//!
//! Every stochastic step in the crate takes an explicit [`StdStream`]. Streams
//! are derived from a global seed plus a purpose tag and an index, so the draw
//! for batch `i` never depends on how many other batches were processed before
//! it or on which worker processed them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StdStream = ChaCha8Rng;

/// Purpose tags keep streams for different subsystems disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Augment = 1,
    DataOrder = 2,
    Init = 3,
    Synthetic = 4,
    Split = 5,
    Preview = 6,
    GradCheck = 7,
}

/// Stream for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> StdStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((purpose as u64) << 56));
    rng.set_stream(index);
    rng
}
