//! Named random streams derived from a single run seed.
//!
//! Each consumer draws from its own ChaCha stream so adding draws in one
//! place never shifts the sequence seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Policy,
    CoinSpawn,
    SessionPlan,
    Synthetic,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Policy => 1,
            Stream::CoinSpawn => 2,
            Stream::SessionPlan => 3,
            Stream::Synthetic => 4,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
