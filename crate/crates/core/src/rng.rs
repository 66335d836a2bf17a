//! Seedable random stream used everywhere randomness enters the pipeline.
//!
//! A thin wrapper over ChaCha8 from `rand_chacha`. ChaCha is counter based, so
//! a stream's full position is its 64-bit seed plus the word counter, which is
//! what checkpoints store. Normal deviates come from `rand_distr`.
//!
//! Independent streams are derived with [`RngStream::split`], which seeds a
//! new generator from the next output of the parent mixed with a stream id.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SPLIT_MIX: u64 = 0xD1B5_4A32_D192_ED03;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Rebuilds a stream at a saved position (checkpoint resume).
    pub fn from_position(seed: u64, word_pos: u128) -> Self {
        let mut s = Self::new(seed);
        s.inner.set_word_pos(word_pos);
        s
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    /// Uniform in [lo, hi).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.random_range(lo..hi)
    }

    /// Uniform integer in [0, n). `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn fill_normal(&mut self, out: &mut [f64], std: f64) {
        for v in out {
            *v = std * self.normal();
        }
    }

    /// Derives an independent child stream. Advances `self` by one output.
    pub fn split(&mut self, stream_id: u64) -> RngStream {
        RngStream::new(self.next_u64() ^ stream_id.wrapping_mul(SPLIT_MIX))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = RngStream::new(43);
        assert_ne!(RngStream::new(42).next_u64(), c.next_u64());
    }

    #[test]
    fn position_roundtrip_resumes_exactly() {
        let mut a = RngStream::new(9);
        for _ in 0..17 {
            a.normal();
        }
        let mut b = RngStream::from_position(a.seed(), a.word_pos());
        assert_eq!(a, b);
        for _ in 0..50 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn splits_are_distinct() {
        let mut parent = RngStream::new(1);
        let mut x = parent.split(0);
        let mut y = parent.split(1);
        assert_ne!(x.next_u64(), y.next_u64());
    }

    #[test]
    fn normal_moments() {
        let mut r = RngStream::new(5);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v = r.normal();
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = RngStream::new(3);
        let mut seen = [0usize; 3];
        for _ in 0..3000 {
            seen[r.below(3)] += 1;
        }
        assert!(seen.iter().all(|&c| c > 900));
    }
}
