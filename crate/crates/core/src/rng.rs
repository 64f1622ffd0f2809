//! Deterministic random streams.
//!
//! Every consumer of randomness derives its own generator from the run seed,
//! a purpose tag and a short list of indices (epoch, color, region, ...):
//!
//! ```text
//! key = splitmix64-fold(seed, purpose, i0, i1, ...)
//! rng = ChaCha8Rng::seed_from_u64(key)
//! ```
//!
//! Streams therefore depend only on *what* is being sampled, never on which
//! thread happens to sample it, so results are identical for any worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. The discriminant is folded into the key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    WorldEvents = 1,
    WorldSignals = 2,
    RegionChain = 3,
    Offset = 4,
    Bootstrap = 5,
    WorldSeed = 6,
    RunSeed = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `seed`, `purpose` and `indices` into a single 64-bit key.
pub fn derive_key(seed: u64, purpose: Purpose, indices: &[u64]) -> u64 {
    let mut key = splitmix64(seed ^ (purpose as u64).rotate_left(56));
    for &i in indices {
        key = splitmix64(key ^ splitmix64(i.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    key
}

pub fn stream(seed: u64, purpose: Purpose, indices: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, purpose, indices))
}
