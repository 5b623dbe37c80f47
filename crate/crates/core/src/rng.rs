//! Pinned pseudo-random stream used for fixtures, weight init and batch sampling.
//!
//! The generator is xoshiro256** seeded through SplitMix64. Conversions to
//! floating point are defined here rather than borrowed from a distribution
//! crate so the stream stays bit-exact across platforms and releases:
//!
//! * uniform `[0, 1)`: `(next_u64 >> 11) * 2^-53`
//! * normal: Box–Muller on two uniforms, `sqrt(-2 ln(1 - u1)) * cos(2π u2)`,
//!   with the matching `sin` value cached for the next draw
//! * integer below `n`: high 64 bits of `next_u64 * n`

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: Xoshiro256StarStar,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Independent stream for a `(seed, a, b)` triple, e.g. (run seed, stage, step).
    pub fn derived(seed: u64, a: u64, b: u64) -> Self {
        let mut mix = splitmix64(seed ^ splitmix64(a.wrapping_add(0x5350_414e)));
        mix = splitmix64(mix ^ splitmix64(b.wrapping_add(0x6261_7463)));
        Self::new(mix)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(7);
        let mut b = SeededRng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn xoshiro_reference_value() {
        // Frozen from a standalone SplitMix64 + xoshiro256** reference.
        let mut r = SeededRng::new(0);
        let first = r.next_u64();
        let mut again = Xoshiro256StarStar::seed_from_u64(0);
        assert_eq!(first, again.next_u64());
        assert_eq!(first, 0x99ec_5f36_cb75_f2b4);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = SeededRng::new(3);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = SeededRng::new(11);
        let mut seen = [false; 8];
        for _ in 0..1000 {
            let v = r.below(8) as usize;
            seen[v] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn derived_streams_differ() {
        let a = SeededRng::derived(1, 0, 5).next_u64();
        let b = SeededRng::derived(1, 0, 6).next_u64();
        let c = SeededRng::derived(1, 1, 5).next_u64();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }
}
