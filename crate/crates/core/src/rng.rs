//! Seeded random generation.
//!
//! Every random draw in the crate goes through [`RngState`], a thin wrapper
//! around ChaCha8 (`rand_chacha::ChaCha8Rng`). ChaCha8 is a counter-based
//! stream cipher generator whose output for a given key and stream id is
//! fixed by its reference definition, so runs replay bit-for-bit across
//! platforms and builds.
//!
//! Child states are keyed by the parent's 64-bit seed and a stream id that
//! is the FNV-1a hash of the parent's stream id and a label. ChaCha streams
//! with distinct ids never overlap, so children do not share output with
//! their parent or with siblings carrying different labels.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngState { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent generator for `label`, starting at the beginning of its
    /// stream regardless of how much of `self` has been consumed.
    pub fn child(&self, label: &str) -> RngState {
        self.child_indexed(label, 0)
    }

    /// Like [`child`](Self::child) but additionally keyed by an index, e.g.
    /// an epoch number.
    pub fn child_indexed(&self, label: &str, index: u64) -> RngState {
        let mut h = fnv1a(FNV_OFFSET, &self.stream.to_le_bytes());
        h = fnv1a(h, label.as_bytes());
        h = fnv1a(h, &index.to_le_bytes());
        // stream 0 is reserved for roots
        if h == 0 {
            h = 1;
        }
        Self::with_stream(self.seed, h)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
