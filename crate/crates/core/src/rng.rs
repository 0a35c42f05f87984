//! Counter-based random streams.
//!
//! Every random draw in training and sampling is addressed by
//! `(seed, step, site)`: the seed keys a ChaCha generator and `(step, site)`
//! selects its stream, so any draw can be replayed without carrying state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Well-known stream sites. Values only need to be distinct.
pub mod site {
    pub const BATCH_MODE: u64 = 1;
    pub const BATCH_OFFSETS: u64 = 2;
    pub const LATENT_SAMPLE: u64 = 3;
    pub const DIFFUSION: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SENSORS: u64 = 6;
    pub const OBS_NOISE: u64 = 7;
    pub const SIM_INIT: u64 = 8;
    pub const SIM_PARAMS: u64 = 9;
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator for the stream `(seed, step, site)`.
pub fn stream(seed: u64, step: u64, site: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(mix(step ^ mix(site.wrapping_add(0x9e37_79b9_7f4a_7c15))));
    rng
}

pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Fills `n` standard normal draws.
pub fn normals<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}
