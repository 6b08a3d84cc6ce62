//! Reproducible random streams and the exact samplers used by the data
//! generators.
//!
//! The source is ChaCha20 (a counter-based generator): a 64-bit seed fills the
//! first 8 key bytes (little endian, remaining key bytes zero) and each
//! logical consumer gets its own 64-bit stream id, so columns never share
//! draws and adding a column never perturbs another. Samplers are frozen:
//!
//! | law | method |
//! |-----|--------|
//! | U[0,1) | top 53 bits of one `u64` |
//! | N(0,1) | Box–Muller, cosine branch only, two open uniforms per draw |
//! | Laplace(μ, b) | inverse CDF from one open uniform |
//! | Beta(a, b), integer a, b | a-th order statistic of a + b − 1 uniforms |
//! | Bernoulli(p) | `u < p` |
//! | Binomial(n, p) | sum of n Bernoulli draws |

use alloc::vec::Vec;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

const TWO_POW_M53: f64 = 1.0 / 9_007_199_254_740_992.0;

/// One independent ChaCha20 stream.
#[derive(Clone, Debug)]
pub struct Stream(ChaCha20Rng);

impl Stream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream(stream);
        Self(rng)
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// Mixes a base seed with an index into a fresh seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// U[0, 1).
#[inline]
pub fn uniform01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * TWO_POW_M53
}

/// U(0, 1), never exactly 0 or 1.
#[inline]
pub fn open01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * TWO_POW_M53
}

pub fn uniform<R: RngCore + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform01(rng)
}

/// Uniform integer in `[0, n)`.
#[inline]
pub fn index_below<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> usize {
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

pub fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let u1 = open01(rng);
    let u2 = open01(rng);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

pub fn normal<R: RngCore + ?Sized>(rng: &mut R, mean: f64, std: f64) -> f64 {
    mean + std * standard_normal(rng)
}

pub fn laplace<R: RngCore + ?Sized>(rng: &mut R, loc: f64, scale: f64) -> f64 {
    let u = open01(rng);
    if u < 0.5 {
        loc + scale * libm::log(2.0 * u)
    } else {
        loc - scale * libm::log(2.0 * (1.0 - u))
    }
}

/// Beta(a, b) for positive integer shapes.
pub fn beta_int<R: RngCore + ?Sized>(rng: &mut R, a: u32, b: u32) -> f64 {
    assert!(a >= 1 && b >= 1, "integer beta shapes must be positive");
    let n = (a + b - 1) as usize;
    let mut u: Vec<f64> = (0..n).map(|_| uniform01(rng)).collect();
    u.sort_by(|x, y| x.partial_cmp(y).unwrap_or(core::cmp::Ordering::Equal));
    u[(a - 1) as usize]
}

pub fn bernoulli<R: RngCore + ?Sized>(rng: &mut R, p: f64) -> bool {
    uniform01(rng) < p
}

pub fn binomial<R: RngCore + ?Sized>(rng: &mut R, n: u32, p: f64) -> u32 {
    (0..n).filter(|_| bernoulli(rng, p)).count() as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    const N: usize = 100_000;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| Stream::new(7, 0).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let mut s0 = Stream::new(7, 0);
        let mut s1 = Stream::new(7, 1);
        assert_ne!(s0.next_u64(), s1.next_u64());
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
    }

    #[test]
    fn normal_moments() {
        let mut r = Stream::new(1, 0);
        let xs: Vec<f64> = (0..N).map(|_| standard_normal(&mut r)).collect();
        let (m, v) = moments(&xs);
        let se = (1.0 / N as f64).sqrt();
        assert!(m.abs() < 5.0 * se);
        // var of sample variance for N(0,1) is 2/(N-1)
        assert!((v - 1.0).abs() < 5.0 * (2.0 / N as f64).sqrt());
    }

    #[test]
    fn laplace_variance_is_two_b_squared() {
        let mut r = Stream::new(2, 0);
        let xs: Vec<f64> = (0..N).map(|_| laplace(&mut r, 0.0, 1.0)).collect();
        let (m, v) = moments(&xs);
        assert!(m.abs() < 5.0 * (2.0 / N as f64).sqrt());
        // fourth moment 24 b^4, so var(s^2) ~ (24 - 4)/N
        assert!((v - 2.0).abs() < 5.0 * (20.0 / N as f64).sqrt());
    }

    #[test]
    fn beta_moments() {
        let mut r = Stream::new(3, 0);
        let xs: Vec<f64> = (0..N).map(|_| beta_int(&mut r, 2, 2) - 0.5).collect();
        let (m, v) = moments(&xs);
        // Beta(2,2): var = 4 / (16 * 5) = 0.05
        assert!(m.abs() < 5.0 * (0.05 / N as f64).sqrt());
        assert!((v - 0.05).abs() < 0.002);
        let ys: Vec<f64> = (0..N).map(|_| beta_int(&mut r, 2, 4)).collect();
        let (m, _) = moments(&ys);
        // Beta(2,4): mean 1/3, var 8 / (36 * 7)
        assert!((m - 1.0 / 3.0).abs() < 5.0 * (8.0 / 252.0 / N as f64).sqrt());
    }

    #[test]
    fn bernoulli_and_binomial_means() {
        let mut r = Stream::new(4, 0);
        let hits = (0..N).filter(|_| bernoulli(&mut r, 0.5)).count() as f64 / N as f64;
        assert!((hits - 0.5).abs() < 5.0 * (0.25 / N as f64).sqrt());
        let bs: Vec<f64> = (0..N).map(|_| binomial(&mut r, 10, 0.5) as f64).collect();
        let (m, v) = moments(&bs);
        assert!((m - 5.0).abs() < 5.0 * (2.5 / N as f64).sqrt());
        assert!((v - 2.5).abs() < 0.1);
    }

    #[test]
    fn index_below_stays_in_range() {
        let mut r = Stream::new(5, 0);
        let mut seen = [0usize; 7];
        for _ in 0..7000 {
            seen[index_below(&mut r, 7)] += 1;
        }
        assert!(seen.iter().all(|&c| c > 800 && c < 1200));
    }
}
