//! Seeded, splittable random streams.
//!
//! Every Monte Carlo replication gets its own ChaCha stream keyed by
//! `(seed, stream id)`, so replications can run on any number of threads and
//! still produce the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags keep independent consumers (queue noise, diffusion noise, ...)
/// from sharing a stream when they use the same replication index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Tag {
    Queue = 0,
    Diffusion = 1,
    Oracle = 2,
    Instance = 3,
}

/// Generator for replication `rep` under the master `seed`.
pub fn stream(seed: u64, rep: u64) -> SimRng {
    tagged(seed, Tag::Queue, rep)
}

pub fn tagged(seed: u64, tag: Tag, rep: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((tag as u64) << 56) | (rep & ((1 << 56) - 1)));
    rng
}
