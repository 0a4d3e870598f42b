//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by the
//! caller's 64-bit seed and a fixed stream id, so independent consumers of the
//! same seed never share a sequence and results are platform independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Geometry = 1,
    DensitySpeckle = 2,
    SosSpeckle = 3,
    Echogenicity = 4,
    Patch = 5,
    QuantNoise = 6,
    Awgn = 7,
    PhaseNoise = 8,
    Split = 9,
    Coin = 10,
    RegionScatter = 11,
}

pub fn stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Seed of the `index`-th sample of a run whose base seed is `base`.
///
/// SplitMix64 finalizer, so neighbouring indices get unrelated seeds.
pub fn sample_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
