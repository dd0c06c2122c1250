//! Counter-based random streams.
//!
//! Every draw is a pure function of `(key, counter)`, and child streams are
//! keyed by hashing a label into the parent key. Deriving a child never
//! advances the parent, so the values a child produces do not depend on how
//! many draws were taken from the parent beforehand.

use rand::seq::SliceRandom;
use rand_core::RngCore;
use rand_distr::{Distribution, StandardNormal};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    key: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            key: mix64(seed ^ GOLDEN),
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream identified by `label`.
    pub fn derive(&self, label: &str) -> RngStream {
        RngStream {
            seed: self.seed,
            key: mix64(self.key ^ fnv1a(label.as_bytes())),
            counter: 0,
        }
    }

    /// Child stream identified by `label` and an index (epoch, record, ...).
    pub fn derive_indexed(&self, label: &str, index: u64) -> RngStream {
        let base = self.derive(label);
        RngStream {
            key: mix64(base.key.wrapping_add(mix64(index.wrapping_add(GOLDEN)))),
            ..base
        }
    }

    #[inline]
    fn draw(&mut self) -> u64 {
        let z = mix64(self.counter.wrapping_mul(GOLDEN) ^ self.key);
        self.counter = self.counter.wrapping_add(1);
        mix64(z.wrapping_add(self.key))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.draw() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(self);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        (self.draw() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.draw()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.draw().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
