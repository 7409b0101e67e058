//! Seeded random variate generation.
//!
//! All simulation in this crate threads an explicit `ChaCha8` stream so
//! that identical seeds give identical output bit-for-bit on every
//! platform. Gamma variates use the Marsaglia-Tsang squeeze (with the
//! `U^(1/shape)` boost below shape 1); Poisson uses sequential inversion
//! for small means and Hormann's PTRS transformed rejection otherwise.

use rand_core::{RngCore, SeedableRng};

use crate::specfun::log_gamma_unchecked;

pub(crate) type Rng = rand_chacha::ChaCha8Rng;

pub(crate) fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derives independent per-task seeds from a master seed by a splitmix64
/// counter pass, so task `i` keeps its stream when the task count changes.
pub(crate) fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e37_79b9_7f4a_7c15_u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in the open interval (0, 1); safe under `ln`.
#[inline]
pub(crate) fn uniform_open(rng: &mut Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard normal via Box-Muller.
#[inline]
pub(crate) fn standard_normal(rng: &mut Rng) -> f64 {
    let u1 = uniform_open(rng);
    let u2 = uniform_open(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Exponential with the given rate.
#[inline]
pub(crate) fn exponential(rng: &mut Rng, rate: f64) -> f64 {
    -uniform_open(rng).ln() / rate
}

/// Gamma draw with `shape > 0` and `rate > 0`.
pub(crate) fn gamma(rng: &mut Rng, shape: f64, rate: f64) -> f64 {
    debug_assert!(shape > 0.0 && rate > 0.0);
    if shape < 1.0 {
        // Boost: G(shape) = G(shape+1) * U^(1/shape).
        let g = gamma_shape_ge1(rng, shape + 1.0);
        let u = uniform_open(rng);
        return g * u.powf(1.0 / shape) / rate;
    }
    gamma_shape_ge1(rng, shape) / rate
}

fn gamma_shape_ge1(rng: &mut Rng, shape: f64) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(rng);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = uniform_open(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Poisson draw with mean `mean >= 0`.
pub(crate) fn poisson(rng: &mut Rng, mean: f64) -> u64 {
    debug_assert!(mean >= 0.0);
    if mean == 0.0 {
        0
    } else if mean < 30.0 {
        poisson_inversion(rng, mean)
    } else {
        poisson_ptrs(rng, mean)
    }
}

fn poisson_inversion(rng: &mut Rng, mean: f64) -> u64 {
    let mut p = (-mean).exp();
    let mut cdf = p;
    let u = uniform_open(rng);
    let mut k = 0u64;
    while u > cdf {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
        if k > 1_000 {
            break;
        }
    }
    k
}

// Hormann (1993) PTRS transformed rejection, valid for mean >= 10.
fn poisson_ptrs(rng: &mut Rng, mean: f64) -> u64 {
    let b = 0.931 + 2.53 * mean.sqrt();
    let a = -0.059 + 0.024_83 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    let log_mean = mean.ln();
    loop {
        let u = uniform_open(rng) - 0.5;
        let v = uniform_open(rng);
        let us = 0.5 - u.abs();
        let kf = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return kf as u64;
        }
        if kf < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = (v * inv_alpha / (a / (us * us) + b)).ln();
        let rhs = kf * log_mean - mean - log_gamma_unchecked(kf + 1.0);
        if lhs <= rhs {
            return kf as u64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn gamma_moments() {
        let mut rng = rng_from_seed(7);
        for &(shape, rate) in &[(0.5, 1.0), (2.5, 3.0), (40.0, 0.5)] {
            let xs: Vec<f64> = (0..200_000).map(|_| gamma(&mut rng, shape, rate)).collect();
            let (mean, var) = moments(&xs);
            assert!((mean - shape / rate).abs() < 0.02 * (shape / rate).max(1.0));
            assert!((var - shape / (rate * rate)).abs() < 0.05 * (shape / (rate * rate)).max(1.0));
        }
    }

    #[test]
    fn poisson_moments_both_branches() {
        let mut rng = rng_from_seed(11);
        for &mean in &[3.0, 25.0, 80.0] {
            let xs: Vec<f64> = (0..200_000)
                .map(|_| poisson(&mut rng, mean) as f64)
                .collect();
            let (m, v) = moments(&xs);
            assert!((m - mean).abs() < 0.05 * mean, "mean {mean}: got {m}");
            assert!((v - mean).abs() < 0.1 * mean, "var {mean}: got {v}");
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = rng_from_seed(3);
        let xs: Vec<f64> = (0..200_000).map(|_| standard_normal(&mut rng)).collect();
        let (m, v) = moments(&xs);
        assert!(m.abs() < 0.01);
        assert!((v - 1.0).abs() < 0.02);
    }

    #[test]
    fn seeding_is_reproducible() {
        let mut a = rng_from_seed(42);
        let mut b = rng_from_seed(42);
        for _ in 0..100 {
            assert_eq!(gamma(&mut a, 1.7, 2.0), gamma(&mut b, 1.7, 2.0));
        }
    }

    #[test]
    fn split_seed_changes_with_index() {
        let s: Vec<u64> = (0..100).map(|i| split_seed(99, i)).collect();
        let mut uniq = s.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), s.len());
    }
}
