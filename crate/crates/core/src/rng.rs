//! Labelled, seed-derived random streams.
//!
//! Every consumer of randomness gets its own `(seed, label)` stream, so adding
//! a draw in one component never shifts the samples of another. Keyed draws
//! (`uniform_at`) are pure functions of `(seed, label, key)`; the quadtree
//! shifts and the per-cell Laplace noise use them so that any machine of the
//! MPC simulator can reproduce a cell's randomness without coordination.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    label: String,
    mixed: u64,
}

impl RngStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let mixed = splitmix64(seed ^ fnv1a(label.as_bytes()));
        Self { seed, label, mixed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// A child stream under `label/sub`.
    pub fn child(&self, sub: &str) -> RngStream {
        RngStream::new(self.seed, format!("{}/{}", self.label, sub))
    }

    /// A child stream indexed by an integer (rounds, trials, clusters).
    pub fn indexed(&self, sub: &str, index: u64) -> RngStream {
        RngStream::new(self.seed, format!("{}/{}#{}", self.label, sub, index))
    }

    /// Sequential generator for this stream. Each call restarts the sequence.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.mixed)
    }

    /// Raw 64-bit hash of `key` under this stream.
    pub fn hash_at(&self, key: u64) -> u64 {
        splitmix64(self.mixed ^ splitmix64(key.wrapping_add(0x9E37_79B9_7F4A_7C15)))
    }

    /// Uniform draw in the open interval (0, 1), a pure function of `key`.
    pub fn uniform_at(&self, key: u64) -> f64 {
        let bits = self.hash_at(key) >> 11;
        (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
