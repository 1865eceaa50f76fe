//! Deterministic random substreams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] keyed by
//! `(root seed, purpose, step, round)` and positioned on the ChaCha stream
//! given by the item index. Two runs with the same root seed therefore
//! produce bit-identical draws regardless of evaluation order or thread
//! count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share key material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    SignalNoise,
    ObservationNoise,
    NetworkInit,
    TrainingPaths,
    Normalizer,
    Reference,
    Test,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::SignalNoise => 0x5161_0001,
            Purpose::ObservationNoise => 0x5161_0002,
            Purpose::NetworkInit => 0x5161_0003,
            Purpose::TrainingPaths => 0x5161_0004,
            Purpose::Normalizer => 0x5161_0005,
            Purpose::Reference => 0x5161_0006,
            Purpose::Test => 0x5161_00ff,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Root of the substream tree for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    root: u64,
}

impl Streams {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Key for a family of per-item generators.
    pub fn key(&self, purpose: Purpose, step: u64, round: u64) -> StreamKey {
        StreamKey {
            streams: *self,
            purpose,
            step,
            round,
        }
    }

    /// Generator for item `index` of round `round` within time step `step`.
    pub fn rng(&self, purpose: Purpose, step: u64, round: u64, index: u64) -> ChaCha8Rng {
        let mut state = self.root ^ purpose.tag().rotate_left(32);
        let mut key = [0u8; 32];
        for (chunk, word) in key
            .chunks_exact_mut(8)
            .zip([step, round, 0x243F_6A88_85A3_08D3, 0x1319_8A2E_0370_7344])
        {
            state ^= word;
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }
}

/// A `(purpose, step, round)` triple bound to a root seed; hands out one
/// independent generator per item index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    streams: Streams,
    purpose: Purpose,
    step: u64,
    round: u64,
}

impl StreamKey {
    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        self.streams.rng(self.purpose, self.step, self.round, index)
    }
}
