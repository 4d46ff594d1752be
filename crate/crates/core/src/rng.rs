//! Seeded generators. Each consumer draws from its own ChaCha stream so that
//! adding draws in one stage never shifts the randomness of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Split,
    Pairs,
    Memory,
    Init,
    Embeddings,
    Shuffle(u64),
    GradCheck,
    Synth,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Split => 1,
            Stream::Pairs => 2,
            Stream::Memory => 3,
            Stream::Init => 4,
            Stream::Embeddings => 5,
            Stream::GradCheck => 6,
            Stream::Synth => 7,
            Stream::Shuffle(epoch) => 1_000 + epoch,
        }
    }
}

pub fn seeded(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
