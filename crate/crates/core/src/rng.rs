//! Seeded random streams keyed by `(seed, component, path)`.
//!
//! Every path draws from its own ChaCha stream, so a path's values depend
//! only on the seed and its indices and never on how work is split across
//! threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Paths per component addressable by a stream id.
pub const PATH_BITS: u32 = 40;

pub fn stream_id(component: usize, path: u64) -> u64 {
    ((component as u64) << PATH_BITS) | (path & ((1u64 << PATH_BITS) - 1))
}

pub fn stream(seed: u64, component: usize, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(component, path));
    rng
}

pub fn fill_normals(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for z in out {
        *z = StandardNormal.sample(rng);
    }
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}
