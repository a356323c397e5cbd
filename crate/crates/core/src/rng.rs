//! Counter-based Gaussian increments.
//!
//! Every normal draw is addressed by `(seed, path, step, mode)`: the seed keys
//! a ChaCha8 generator, the path selects the stream and the word position is
//! `(step * m + mode) * 4` (two 64-bit words per Box–Muller draw). Any
//! partition of paths over threads, and any segmentation of the time axis,
//! therefore reads the same numbers.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const WORDS_PER_NORMAL: u128 = 4;

/// SplitMix64 finaliser, used to derive independent sub-seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in the half-open interval (0, 1].
#[inline]
fn open_unit(x: u64) -> f64 {
    ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// One standard normal from two 64-bit words (cosine branch of Box–Muller).
#[inline]
pub fn standard_normal<R: RngCore>(rng: &mut R) -> f64 {
    let u1 = open_unit(rng.next_u64());
    let u2 = open_unit(rng.next_u64());
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[inline]
pub fn uniform<R: RngCore>(rng: &mut R) -> f64 {
    open_unit(rng.next_u64())
}

/// A general-purpose generator for samplers that do not need step addressing.
pub fn sampler_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}

/// Brownian increments for one path.
#[derive(Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    m: usize,
    sqrt_h: f64,
}

impl NoiseStream {
    pub fn new(seed: u64, path: u64, m: usize, h: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        NoiseStream {
            rng,
            m,
            sqrt_h: h.sqrt(),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.m
    }

    /// Positions the stream at the first mode of absolute step `step`.
    pub fn seek(&mut self, step: u64) {
        self.rng
            .set_word_pos(step as u128 * self.m as u128 * WORDS_PER_NORMAL);
    }

    /// Writes the `m` increments of the current step and advances.
    pub fn next_increment(&mut self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.m);
        for o in out.iter_mut() {
            *o = self.sqrt_h * standard_normal(&mut self.rng);
        }
    }

    pub fn increment_at(&mut self, step: u64, out: &mut [f64]) {
        self.seek(step);
        self.next_increment(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeking_matches_sequential_reads() {
        let mut a = NoiseStream::new(7, 3, 4, 0.01);
        let mut seq = vec![[0.0; 4]; 10];
        a.seek(0);
        for row in seq.iter_mut() {
            a.next_increment(row);
        }
        let mut b = NoiseStream::new(7, 3, 4, 0.01);
        let mut out = [0.0; 4];
        for s in [9u64, 2, 5, 0] {
            b.increment_at(s, &mut out);
            assert_eq!(out, seq[s as usize]);
        }
    }

    #[test]
    fn paths_are_distinct_streams() {
        let mut a = NoiseStream::new(1, 0, 2, 1.0);
        let mut b = NoiseStream::new(1, 1, 2, 1.0);
        let (mut x, mut y) = ([0.0; 2], [0.0; 2]);
        a.next_increment(&mut x);
        b.next_increment(&mut y);
        assert_ne!(x, y);
    }

    #[test]
    fn moments_are_gaussian() {
        let h = 0.25;
        let mut s = NoiseStream::new(42, 0, 1, h);
        let n = 200_000;
        let mut out = [0.0];
        let (mut m1, mut m2, mut m4) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            s.next_increment(&mut out);
            let z = out[0];
            m1 += z;
            m2 += z * z;
            m4 += z.powi(4);
        }
        let nf = n as f64;
        m1 /= nf;
        m2 /= nf;
        m4 /= nf;
        // 5 standard errors
        assert!(m1.abs() < 5.0 * (h / nf).sqrt());
        assert!((m2 - h).abs() < 5.0 * h * (2.0 / nf).sqrt());
        assert!((m4 / (h * h) - 3.0).abs() < 0.15);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(0, 1), derive_seed(0, 2));
        assert_ne!(derive_seed(1, 1), derive_seed(2, 1));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }
}
