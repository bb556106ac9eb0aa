//! Seeded random streams.
//!
//! Every stochastic routine in this crate takes an explicit seed or generator;
//! nothing draws from ambient entropy. Independent streams are derived from a
//! root seed with [`derive_rng`] so that, e.g., each mask in a dataset or each
//! arm of an experiment gets its own reproducible generator.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Root generator for a seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent generator for stream `stream` under the same root seed.
pub fn derive_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One standard-normal draw (Box-Muller, first member of the pair).
pub fn standard_normal(rng: &mut Rng) -> f64 {
    let (z0, _) = normal_pair(rng);
    z0
}

fn normal_pair(rng: &mut Rng) -> (f64, f64) {
    // u1 in (0, 1] so the log is finite.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Fill a slice with standard-normal draws.
pub fn fill_standard_normal(rng: &mut Rng, out: &mut [f32]) {
    let mut i = 0;
    while i + 1 < out.len() {
        let (z0, z1) = normal_pair(rng);
        out[i] = z0 as f32;
        out[i + 1] = z1 as f32;
        i += 2;
    }
    if i < out.len() {
        out[i] = standard_normal(rng) as f32;
    }
}
