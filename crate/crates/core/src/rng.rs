//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by
//! `(seed, round, client, purpose)`, so results never depend on the order in
//! which simulated clients execute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// What a derived stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    ClassMeans = 1,
    TrainSamples = 2,
    TestSamples = 3,
    Partition = 4,
    ModelInit = 5,
    Selection = 6,
    BatchOrder = 7,
    Gate = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix the stream coordinates into a single 64-bit key.
pub fn derive_seed(seed: u64, round: u64, client: u64, stream: Stream) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ round.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    h = splitmix64(h ^ client.wrapping_mul(0xA076_1D64_78BD_642F));
    splitmix64(h ^ (stream as u64))
}

pub fn stream_rng(seed: u64, round: u64, client: u64, stream: Stream) -> SimRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, round, client, stream))
}
