//! Named random streams fanned out from one root seed.
//!
//! Each consumer draws from its own ChaCha stream, so adding draws in one
//! place never shifts the values another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamId {
    Init = 1,
    Data = 2,
    Flips = 3,
    Targets = 4,
    Latents = 5,
    Evaluation = 6,
}

pub fn stream(seed: u64, id: StreamId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

/// A stream derived from `seed`, a consumer and an index (e.g. an evaluation domain pair).
pub fn indexed_stream(seed: u64, id: StreamId, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(id as u64);
    rng
}

/// The streams consumed by the training loop.
#[derive(Clone, Debug)]
pub struct TrainingStreams {
    pub seed: u64,
    pub data: ChaCha8Rng,
    pub flips: ChaCha8Rng,
    pub targets: ChaCha8Rng,
    pub latents: ChaCha8Rng,
}

/// Serializable positions of every training stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamPositions {
    pub seed: u64,
    pub data: String,
    pub flips: String,
    pub targets: String,
    pub latents: String,
}

impl TrainingStreams {
    pub fn new(seed: u64) -> Self {
        TrainingStreams {
            seed,
            data: stream(seed, StreamId::Data),
            flips: stream(seed, StreamId::Flips),
            targets: stream(seed, StreamId::Targets),
            latents: stream(seed, StreamId::Latents),
        }
    }

    pub fn positions(&self) -> StreamPositions {
        StreamPositions {
            seed: self.seed,
            data: self.data.get_word_pos().to_string(),
            flips: self.flips.get_word_pos().to_string(),
            targets: self.targets.get_word_pos().to_string(),
            latents: self.latents.get_word_pos().to_string(),
        }
    }

    pub fn restore(positions: &StreamPositions) -> Result<Self, std::num::ParseIntError> {
        let mut streams = TrainingStreams::new(positions.seed);
        streams.data.set_word_pos(positions.data.parse()?);
        streams.flips.set_word_pos(positions.flips.parse()?);
        streams.targets.set_word_pos(positions.targets.parse()?);
        streams.latents.set_word_pos(positions.latents.parse()?);
        Ok(streams)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn restored_streams_continue_identically() {
        let mut a = TrainingStreams::new(9);
        for _ in 0..17 {
            a.data.random::<u64>();
            a.latents.random::<f64>();
        }
        let mut b = TrainingStreams::restore(&a.positions()).unwrap();
        for _ in 0..5 {
            assert_eq!(a.data.random::<u64>(), b.data.random::<u64>());
            assert_eq!(a.latents.random::<u32>(), b.latents.random::<u32>());
            assert_eq!(a.flips.random::<u8>(), b.flips.random::<u8>());
        }
    }

    #[test]
    fn streams_are_independent() {
        let mut a = TrainingStreams::new(1);
        let mut b = TrainingStreams::new(1);
        for _ in 0..10 {
            b.flips.random::<u64>();
        }
        assert_eq!(a.data.random::<u64>(), b.data.random::<u64>());
        assert_ne!(stream(1, StreamId::Data).random::<u64>(), stream(1, StreamId::Flips).random::<u64>());
    }
}
