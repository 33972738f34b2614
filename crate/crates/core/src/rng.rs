//! Seeded randomness shared by masking, initialization and batching.
//!
//! The generator is ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`), a
//! counter-based stream cipher. A `u64` seed is expanded to the 256-bit key
//! with `SeedableRng::seed_from_u64` (PCG32 expansion, as fixed by
//! `rand_core`); independent substreams are selected with the ChaCha stream
//! id. Bounded integers are drawn by rejection on `next_u64` (see
//! [`SeededRng::below`]) rather than through `rand`'s range sampling, so the
//! draw sequence only depends on the ChaCha keystream.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of three words:
/// `mix64(mix64(mix64(a) ^ b) ^ c)`.
pub fn hash64(a: u64, b: u64, c: u64) -> u64 {
    mix64(mix64(mix64(a) ^ b) ^ c)
}

/// Mask seed for one superpatch at one epoch.
pub fn superpatch_seed(run_seed: u64, superpatch_index: u64, epoch: u64) -> u64 {
    hash64(run_seed, superpatch_index, epoch)
}

/// Stream ids used across the crate so draws never alias.
pub mod streams {
    pub const MASK: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const PHANTOM: u64 = 4;
}

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `[0, n)`.
    ///
    /// Draws `x = next_u64()` and accepts `x % n` unless `x` falls in the
    /// incomplete top bucket `x >= u64::MAX - (u64::MAX % n)`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Uniform `f64` in `[0, 1)` from the top 53 bits.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Partial Fisher–Yates: after the call `items[..k]` is a uniform
    /// random `k`-subset of the input, in draw order.
    pub fn partial_shuffle<T>(&mut self, items: &mut [T], k: usize) {
        let n = items.len();
        for i in 0..k.min(n) {
            let j = i + self.below((n - i) as u64) as usize;
            items.swap(i, j);
        }
    }

    /// Full Fisher–Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.partial_shuffle(&mut idx, n);
        idx
    }

    /// Standard normal sample via Box–Muller, truncated to `[-2, 2]` by
    /// rejection.
    pub fn truncated_normal(&mut self) -> f64 {
        loop {
            let u1 = 1.0 - self.unit_f64();
            let u2 = self.unit_f64();
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            if z.abs() <= 2.0 {
                return z;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(42, streams::MASK);
        let mut b = SeededRng::new(42, streams::MASK);
        for _ in 0..64 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = SeededRng::new(42, streams::MASK);
        let mut b = SeededRng::new(42, streams::INIT);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = SeededRng::new(7, 0);
        let mut seen = [false; 9];
        for _ in 0..1000 {
            let v = r.below(9) as usize;
            seen[v] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut r = SeededRng::new(3, 0);
        let mut p = r.permutation(100);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn hash_is_order_sensitive() {
        assert_ne!(hash64(1, 2, 3), hash64(2, 1, 3));
        assert_ne!(superpatch_seed(0, 0, 0), superpatch_seed(0, 1, 0));
        assert_ne!(superpatch_seed(0, 0, 0), superpatch_seed(0, 0, 1));
    }

    #[test]
    fn truncated_normal_bounded() {
        let mut r = SeededRng::new(9, streams::INIT);
        let xs: Vec<f64> = (0..10_000).map(|_| r.truncated_normal()).collect();
        assert!(xs.iter().all(|x| x.abs() <= 2.0));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.05);
    }
}
