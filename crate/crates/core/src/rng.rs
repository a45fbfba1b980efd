//! Counter-based random streams.
//!
//! Every consumer derives its own generator from `(seed, stream path)`, so the
//! draws an utterance or sample sees never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub mod stream {
    pub const INIT_HYPER: u64 = 1;
    pub const INIT_LANGUAGE: u64 = 2;
    pub const EPS_HYPER: u64 = 3;
    pub const EPS_LANGUAGE: u64 = 4;
    pub const SYNTH: u64 = 5;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let key = path
        .iter()
        .fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)));
    ChaCha8Rng::seed_from_u64(key)
}

pub fn standard_normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
