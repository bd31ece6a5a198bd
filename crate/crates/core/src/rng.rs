//! Counter-keyed random streams.
//!
//! A stream is identified by the master seed plus `(agent, purpose, index)`;
//! the key is mixed into a ChaCha8 seed, so any two distinct keys give
//! independent sequences and the same key always replays bit-for-bit.

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    Geometry,
    Fading,
    LineOfSight,
    Policy,
    Gate,
    Replay,
    Imagination,
    Init,
    Baseline,
    Evaluation,
    Test,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Geometry => 1,
            Purpose::Fading => 2,
            Purpose::LineOfSight => 3,
            Purpose::Policy => 4,
            Purpose::Gate => 5,
            Purpose::Replay => 6,
            Purpose::Imagination => 7,
            Purpose::Init => 8,
            Purpose::Baseline => 9,
            Purpose::Evaluation => 10,
            Purpose::Test => 11,
        }
    }
}

/// Agent slot used for streams that belong to the network rather than to an
/// agent.
pub const SHARED: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub agent: u64,
    pub purpose: Purpose,
    pub index: u64,
}

impl StreamId {
    pub fn new(agent: u64, purpose: Purpose, index: u64) -> Self {
        Self {
            agent,
            purpose,
            index,
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

/// Single-owner random stream. Not `Clone`: a stream must not be shared.
#[derive(Debug)]
pub struct RngStream {
    id: StreamId,
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        let words = [
            splitmix64(&mut state),
            splitmix64(&mut state) ^ id.agent,
            splitmix64(&mut state) ^ id.purpose.tag(),
            splitmix64(&mut state) ^ id.index,
        ];
        // second mixing round so that nearby keys decorrelate
        let mut mix = words[0] ^ words[1].rotate_left(17) ^ words[2].rotate_left(31) ^ words[3].rotate_left(47);
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            let v = w ^ splitmix64(&mut mix);
            chunk.copy_from_slice(&v.to_le_bytes());
        }
        Self {
            id,
            seed,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.gen::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Circularly-symmetric complex normal with unit variance.
    pub fn complex_normal(&mut self) -> Complex64 {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Complex64::new(self.normal() * s, self.normal() * s)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}
