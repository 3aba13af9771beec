//! Seed derivation.
//!
//! Every random draw in the harness comes from a `ChaCha8Rng` seeded with a
//! child seed. Child seeds are derived from the global seed and a context
//! tuple by folding each component through the SplitMix64 finalizer:
//!
//! ```text
//! h = splitmix64(global_seed)
//! for c in [stream, sample_id, epoch, batch_index]:
//!     h = splitmix64(h ^ splitmix64(c))
//! ```
//!
//! with `splitmix64(z) = finalize(z + 0x9E3779B97F4A7C15)` and
//! `finalize` the standard `(z ^ z>>30) * 0xBF58476D1CE4E5B9`,
//! `(z ^ z>>27) * 0x94D049BB133111EB`, `z ^ z>>31` sequence (wrapping
//! arithmetic). Reimplementing these lines in any language reproduces the
//! same child seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(z: u64) -> u64 {
    let mut z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named random streams, so that unrelated draws sharing a seed never
/// share a child seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Mask = 1,
    MaskGlobal = 2,
    Fold = 3,
    CohortLabels = 4,
    CohortTrajectory = 5,
    ClusterWindow = 6,
    ClusterFill = 7,
    Transport = 8,
    ValueDependent = 9,
    BatchOrder = 10,
    Shuffle = 11,
}

/// Derives the child seed for `(stream, sample_id, epoch, batch_index)`.
pub fn mix(global: u64, stream: Stream, sample_id: u64, epoch: u64, batch_index: u64) -> u64 {
    [stream as u64, sample_id, epoch, batch_index]
        .into_iter()
        .fold(splitmix64(global), |h, c| splitmix64(h ^ splitmix64(c)))
}

pub fn rng(global: u64, stream: Stream, sample_id: u64, epoch: u64, batch_index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(global, stream, sample_id, epoch, batch_index))
}
