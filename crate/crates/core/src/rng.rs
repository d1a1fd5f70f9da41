//! Counter-addressed random streams.
//!
//! Every randomized operation takes an explicit generator. Parallel stages
//! derive one stream per work item from `(seed, domain, index)` so the output
//! never depends on how work is split across threads.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit id for a named sub-stream ("trace", "train", ...).
pub fn domain(name: &str) -> u64 {
    // FNV-1a; stable across platforms and toolchains.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a child seed from a parent seed and a named domain.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    splitmix64(seed ^ splitmix64(domain(name)))
}

/// Generator for work item `index` of a stage seeded with `seed`.
pub fn stream(seed: u64, index: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(splitmix64(seed));
    rng.set_stream(index);
    rng
}

/// Generator addressed by two counters, e.g. `(training step, sample)`.
pub fn stream2(seed: u64, major: u64, minor: u64) -> Rng {
    stream(splitmix64(seed ^ splitmix64(major.wrapping_add(1))), minor)
}

/// Uniform sample in [0, 1).
#[inline]
pub fn uniform(rng: &mut Rng) -> f64 {
    rng.gen::<f64>()
}
