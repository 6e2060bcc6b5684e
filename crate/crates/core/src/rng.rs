//! Seeded random streams.
//!
//! All randomness flows from one master seed. Each consumer asks for a named
//! stream; ChaCha's 64-bit stream selector keeps the streams independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named sub-streams of the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data,
    Mask,
    Split,
    Init,
    Shuffle,
    Gumbel,
    Eval,
    Bootstrap,
    Prior,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::Mask => 2,
            Stream::Split => 3,
            Stream::Init => 4,
            Stream::Shuffle => 5,
            Stream::Gumbel => 6,
            Stream::Eval => 7,
            Stream::Bootstrap => 8,
            Stream::Prior => 9,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    substream(seed, which, 0)
}

/// Counter-indexed stream (e.g. one per generated sample); order-independent.
pub fn substream(seed: u64, which: Stream, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // upper bits select the named stream, lower bits the counter
    rng.set_stream((which.id() << 48) ^ index);
    rng
}
