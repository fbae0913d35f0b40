//! Named random sub-streams derived from a master seed.
//!
//! Every consumer of randomness asks for its own stream keyed by
//! `(purpose, a, b)`, typically `(purpose, client, round)`. Streams are
//! independent of the order in which they are requested, so adding a new
//! consumer never shifts the draws seen by an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. The discriminant is mixed into the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Data = 1,
    Topology = 2,
    Init = 3,
    Training = 4,
    Schedule = 5,
    Delivery = 6,
    Uplink = 7,
    Downlink = 8,
    Split = 9,
    Shuffle = 10,
    GroupShift = 11,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit sub-seed for `(purpose, a, b)` under `seed`.
pub fn sub_seed(seed: u64, purpose: Purpose, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ purpose as u64);
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(32))
}

/// A ChaCha8 generator seeded from [`sub_seed`].
pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, purpose, a, b))
}
