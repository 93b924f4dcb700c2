//! One seed per run, split into independent ChaCha streams per purpose so
//! that, e.g., turning dropout off does not shift the initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Dropout = 1,
    Sampling = 2,
    Temperature = 3,
    Split = 4,
    /// Mini-batch order for the graph task.
    Batches = 5,
}

pub fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream as u64);
    r
}
