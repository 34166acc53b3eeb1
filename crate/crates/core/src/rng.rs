//! Seeded random streams.
//!
//! One experiment seed fans out into independent ChaCha sub-streams keyed by
//! `(round, purpose)`, so the draws for one purpose never shift when another
//! purpose consumes more or fewer numbers (e.g. a different fading model).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a sub-stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Active-set selection.
    Devices,
    /// Mini-batch sampling.
    Batches,
    /// Fading gains.
    Fading,
    /// Additive channel noise.
    Noise,
    /// Synthetic data generation.
    Data,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Devices => 1,
            Purpose::Batches => 2,
            Purpose::Fading => 3,
            Purpose::Noise => 4,
            Purpose::Data => 5,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the sub-stream for `(seed, round, purpose)`.
pub fn stream(seed: u64, round: u64, purpose: Purpose) -> ChaCha8Rng {
    let key = splitmix64(splitmix64(splitmix64(seed) ^ round) ^ purpose.tag());
    ChaCha8Rng::seed_from_u64(key)
}
