//! Seed derivation and random streams.
//!
//! Every random stream in a run is a `ChaCha8Rng` seeded from a 64-bit value
//! derived by hash-chaining the run seed with integer indices:
//!
//! ```text
//! h0 = mix(run_seed)
//! h_{k+1} = mix(h_k ^ mix(index_k + GAMMA))
//! ```
//!
//! where `mix` is the SplitMix64 finalizer and `GAMMA = 0x9E3779B97F4A7C15`.
//! The construction only uses wrapping 64-bit arithmetic, so it is identical
//! on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(seed), |h, &i| {
        mix64(h ^ mix64(i.wrapping_add(GAMMA)))
    })
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named stream domains so different consumers of one run seed never share
/// a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Optimizer = 1,
    Evaluation = 2,
    Holdout = 3,
    Sampling = 4,
}

/// The run-level seeding scheme: `seed(gen, candidate, rollout)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedScheme {
    pub run_seed: u64,
}

impl SeedScheme {
    pub fn new(run_seed: u64) -> Self {
        Self { run_seed }
    }

    pub fn stream(&self, stream: Stream) -> u64 {
        derive_seed(self.run_seed, &[stream as u64])
    }

    pub fn candidate(&self, generation: u64, candidate: u64) -> u64 {
        derive_seed(
            self.run_seed,
            &[Stream::Evaluation as u64, generation, candidate],
        )
    }

    pub fn rollout(&self, generation: u64, candidate: u64, rollout: u64) -> u64 {
        derive_seed(self.candidate(generation, candidate), &[rollout])
    }
}
