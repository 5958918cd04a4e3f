//! Deterministic random-number streams.
//!
//! Every stochastic operation in this crate takes an explicit `u64` seed and
//! derives independent substreams from it, so that trial-level parallelism
//! produces the same bytes as a sequential run. The generator is ChaCha8
//! (`rand_chacha::ChaCha8Rng`), which is platform independent and has a
//! stable output sequence for a given key.
//!
//! Substream keys are derived by the SplitMix64 finalizer:
//!
//! ```text
//! key(seed, domain, index) = mix(mix(mix(seed) ^ domain) ^ index)
//! ```
//!
//! where `mix` is the 64-bit SplitMix64 avalanche function and `domain` is a
//! fixed constant naming the operation (see the `domain` module). Two
//! substreams with different `(domain, index)` pairs are statistically
//! independent for all practical purposes.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fixed domain constants, one per stochastic operation.
pub mod domain {
    /// Synthetic trial generation (index = trial ordinal).
    pub const SYNTH: u64 = 0x53594e54_48455349;
    /// Network weight initialization (index = tensor ordinal).
    pub const INIT: u64 = 0x494e4954_57454947;
    /// Epoch shuffling during training (index = epoch).
    pub const SHUFFLE: u64 = 0x53485546_464c4531;
    /// Amplitude perturbation factors (index = repetition * trials + trial).
    pub const AMP_PERTURB: u64 = 0x414d504c_50455254;
    /// Phase perturbation shifts (index = repetition * trials + trial).
    pub const PHASE_PERTURB: u64 = 0x50484153_50455254;
}

/// SplitMix64 avalanche function.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive the substream key for `(seed, domain, index)`.
#[inline]
pub fn substream_key(seed: u64, domain: u64, index: u64) -> u64 {
    mix(mix(mix(seed) ^ domain) ^ index)
}

/// A ChaCha8 generator positioned at the start of the named substream.
pub fn substream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_key(seed, domain, index))
}
