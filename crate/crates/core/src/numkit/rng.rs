//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, stream_id, counter)`, so any
//! number of streams can be split off a seed and replayed independently.

use std::f64::consts::TAU;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
    key: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let key = mix64(mix64(seed ^ GOLDEN).wrapping_add(mix64(stream_id.wrapping_mul(GOLDEN) ^ 0x5851_F42D_4C95_7F2D)));
        Self { seed, stream_id, counter: 0, key }
    }

    /// Child stream whose id is derived from this stream's id and `tag`.
    /// The parent's counter is not consumed.
    pub fn split(&self, tag: u64) -> Self {
        Self::new(self.seed, mix64(self.stream_id ^ mix64(tag.wrapping_add(GOLDEN))))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Draw at an explicit counter without advancing the stream.
    #[inline]
    pub fn u64_at(&self, counter: u64) -> u64 {
        mix64(self.key ^ mix64(counter.wrapping_mul(GOLDEN).wrapping_add(self.key.rotate_left(17))))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = self.u64_at(self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`, safe to take the log of.
    #[inline]
    fn uniform_open0(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        // Lemire multiply-shift; the bias is below 2^-64 * n and irrelevant here.
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal via Box-Muller. Consumes two counters per draw.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open0();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Poisson draw by inversion of the product of uniforms (Knuth).
    pub fn poisson(&mut self, mean: f64) -> u64 {
        assert!(mean >= 0.0 && mean < 500.0, "poisson mean out of supported range");
        let limit = (-mean).exp();
        let mut k = 0;
        let mut p = self.uniform_open0();
        while p > limit {
            k += 1;
            p *= self.uniform_open0();
        }
        k
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
