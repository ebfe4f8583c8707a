//! Seeded random streams.
//!
//! Every random draw in the crate goes through a [`Stream`], a ChaCha20
//! generator seeded from a 64-bit value. Sub-streams for independent pieces of
//! work are keyed with [`sub_seed`], so results never depend on scheduling.
//!
//! Uniform reals take the top 53 bits of a `u64` draw. Standard normals use
//! the Box–Muller transform on two such uniforms; the second variate of each
//! pair is cached and returned by the next call.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a decorrelated seed from a master seed and a key path.
///
/// `h0 = mix(master + GOLDEN)`, then for each key `k`:
/// `h = mix(h ^ mix(k + GOLDEN))` rotated left by 17 after each step.
pub fn sub_seed(master: u64, keys: &[u64]) -> u64 {
    let mut h = mix(master.wrapping_add(GOLDEN));
    for &k in keys {
        h = mix(h ^ mix(k.wrapping_add(GOLDEN))).rotate_left(17);
    }
    h
}

#[derive(Clone, Debug)]
pub struct Stream {
    rng: ChaCha20Rng,
    spare_normal: Option<f64>,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream {
            rng: ChaCha20Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// A child stream keyed by `keys`, independent of how much of `self` has
    /// been consumed.
    pub fn keyed(seed: u64, keys: &[u64]) -> Self {
        Stream::new(sub_seed(seed, keys))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer on [0, n). Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        self.rng.random_range(0..n as u64) as usize
    }

    /// Standard normal variate (Box–Muller).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// `k` distinct indices from `0..n`, uniformly without replacement, in
    /// ascending order.
    pub fn choose_sorted(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot choose {k} of {n}");
        let mut idx = rand::seq::index::sample(&mut self.rng, n, k).into_vec();
        idx.sort_unstable();
        idx
    }

    /// Fisher–Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}
