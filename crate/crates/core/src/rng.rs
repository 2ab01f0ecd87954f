//! Deterministic random streams.
//!
//! Seeds for sub-streams (per gate, per sweep cell, per network instance) are
//! derived by hashing the parent seed with a stream index, so any unit of work
//! can be reproduced in isolation and in any order. Domain switching draws use
//! a counter-based generator: the uniform for (step, domain) is a pure function
//! of the stream key, which keeps trajectories independent of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of sub-stream `stream` of `parent`.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    mix64(mix64(parent ^ 0x5eed_5eed_5eed_5eed).wrapping_add(stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Seed derived from a path of stream indices.
pub fn derive_path(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(parent, |seed, &s| derive_seed(seed, s))
}

/// A conventional sequential generator for one-off draws (activation fields,
/// masks, initial weights, shuffling).
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Counter-based uniform generator keyed by a 64-bit stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { key: mix64(seed ^ 0xc0ff_ee00_dead_beef) }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Uniform in [0, 1) for the given two-level counter.
    #[inline]
    pub fn uniform(&self, step: u64, index: u64) -> f64 {
        let block = mix64(self.key ^ step.wrapping_mul(GOLDEN_GAMMA));
        let bits = mix64(block.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)));
        (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
