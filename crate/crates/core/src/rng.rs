//! Seeded random streams. Each pipeline stage draws from its own ChaCha
//! stream, so changing how much one stage consumes never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Synthetic = 1,
    Split = 2,
    Dither = 3,
    Solver = 4,
    PredictDither = 5,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
