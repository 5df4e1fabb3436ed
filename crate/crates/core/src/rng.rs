//! Seed derivation for reproducible, worker-count independent streams.
//!
//! Every random object is keyed by a chain of integers (master seed, run,
//! step, node, ...). Keys are mixed with the SplitMix64 finalizer and the
//! result seeds a PCG generator. Normal variates come from the ziggurat
//! sampler of `rand_distr::StandardNormal`.

use rand::SeedableRng;
use rand_pcg::Pcg64Mcg;

pub type StreamRng = Pcg64Mcg;

pub const TAG_INIT: u64 = 0x1A17_0000_0000_0001;
pub const TAG_STEP: u64 = 0x57E9_0000_0000_0002;
pub const TAG_CHAIN: u64 = 0xC4A1_0000_0000_0003;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed number `index` of `seed`.
#[inline]
pub fn derive(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_mul(0xD1B5_4A32_D192_ED03).wrapping_add(1)))
}

#[inline]
pub fn stream(seed: u64) -> StreamRng {
    Pcg64Mcg::seed_from_u64(seed)
}
