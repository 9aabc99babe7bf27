//! Labeled RNG substreams.
//!
//! Every random draw in a simulation comes from a ChaCha8 generator seeded by
//! mixing the master seed with a purpose tag and a list of indices:
//!
//! ```text
//! h = splitmix64(master ^ fnv1a64(tag))
//! for i in indices: h = splitmix64(h ^ splitmix64(i + GOLDEN))
//! ```
//!
//! `splitmix64` is the finalizer from Steele et al. (the `SplitMix64` output
//! function). Streams with different tags or indices are statistically
//! independent for practical purposes, and a stream never depends on how many
//! values were drawn from any other stream. That is what makes client results
//! independent of execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(tag: &str) -> u64 {
    tag.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01B3)
    })
}

/// Derive a 64-bit seed for `(master, tag, indices)`.
pub fn derive(master: u64, tag: &str, indices: &[u64]) -> u64 {
    indices
        .iter()
        .fold(splitmix64(master ^ fnv1a64(tag)), |h, &i| {
            splitmix64(h ^ splitmix64(i.wrapping_add(GOLDEN)))
        })
}

/// A generator for the substream `(master, tag, indices)`.
pub fn stream(master: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, tag, indices))
}

/// Purpose tags used by the simulator.
pub mod tags {
    pub const PARTITION: &str = "partition";
    pub const INIT: &str = "init";
    pub const SAMPLE: &str = "sample";
    pub const CLIENT: &str = "client";
    pub const SHUFFLE: &str = "shuffle";
    pub const PROBE: &str = "probe";
    pub const SYNTH: &str = "synth";
    pub const DIRICHLET_CLASS: &str = "dirichlet-class";
}
