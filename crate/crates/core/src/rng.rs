//! Seeded random streams.
//!
//! Every random draw in a run descends from a single `u64` seed. Each consumer
//! gets its own ChaCha stream so that adding draws in one place never shifts
//! the numbers another place sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Substream {
    /// Initial perturbation of the alignment iterate.
    Init = 1,
    /// Synthetic fixture generation.
    Synthetic = 2,
    /// Sampling done by evaluation and test harnesses.
    Evaluation = 3,
}

pub fn substream(seed: u64, stream: Substream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
