//! Latent first-order gamma autoregression with unit mean.
//!
//! The process `Z_t` is stationary Gamma with mean 1 and variance `1/phi`,
//! lag-j autocorrelation `rho^j`. A pair `(Z_{t+j}, Z_t)` follows the
//! Kibble bivariate gamma law, which also admits a negative-binomial
//! mixture representation: given `U ~ NegBin(phi, rho^j)`, the two
//! coordinates are iid `Gamma(rate phi/(1-rho^j), shape phi + U)`. Both
//! routes are implemented here, along with the conditional Laplace
//! transform and conditional inverse moment used by the volatility
//! forecaster.

use serde::{Deserialize, Serialize};

use crate::sampling::{self, Rng};
use crate::specfun::{
    self, log_gamma_unchecked, negbin_log_pmf, SeriesAccuracy,
};
use crate::{Error, Result};

/// Parameters of the latent process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarConfig {
    phi: f64,
    rho: f64,
}

impl GarConfig {
    /// Requires `phi > 0` and `rho` in (0, 1).
    pub fn new(phi: f64, rho: f64) -> Result<Self> {
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::domain(format!("GAR shape phi must be > 0, got {phi}")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::domain(format!(
                "GAR autocorrelation rho must be in (0,1), got {rho}"
            )));
        }
        Ok(GarConfig { phi, rho })
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Innovation rate `alpha = phi / (1 - rho)`; always exceeds `phi`.
    pub fn alpha(&self) -> f64 {
        self.phi / (1.0 - self.rho)
    }
}

/// A simulated trajectory together with what produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GarPath {
    pub values: Vec<f64>,
    pub config: GarConfig,
    pub seed: u64,
}

/// Simulates `n` steps of the process. Deterministic given the seed.
///
/// `z_0` is a stationary Gamma(rate phi, shape phi) draw; each transition
/// thins the previous level through a Poisson number of exponential
/// summands and adds an independent gamma innovation.
pub fn simulate_gar(config: GarConfig, n: usize, seed: u64) -> GarPath {
    assert!(n >= 1, "path length must be at least 1");
    let mut rng = sampling::rng_from_seed(seed);
    let values = simulate_gar_with(&mut rng, config, n);
    GarPath {
        values,
        config,
        seed,
    }
}

pub(crate) fn simulate_gar_with(rng: &mut Rng, config: GarConfig, n: usize) -> Vec<f64> {
    let phi = config.phi;
    let alpha = config.alpha();
    let rho = config.rho;
    let mut values = Vec::with_capacity(n);
    let mut z = sampling::gamma(rng, phi, phi);
    values.push(z);
    for _ in 1..n {
        z = gar_step(rng, z, phi, alpha, rho);
        values.push(z);
    }
    values
}

#[inline]
fn gar_step(rng: &mut Rng, z_prev: f64, phi: f64, alpha: f64, rho: f64) -> f64 {
    let n_thin = sampling::poisson(rng, alpha * rho * z_prev);
    // The sum of n iid Exp(alpha) is Gamma(shape n, rate alpha).
    let thinned = if n_thin > 0 {
        sampling::gamma(rng, n_thin as f64, alpha)
    } else {
        0.0
    };
    thinned + sampling::gamma(rng, phi, alpha)
}

/// Draws from the `steps`-step transition started at `z_from`, repeated
/// `n_draws` times independently. Used as a Monte Carlo oracle for the
/// conditional-law formulas.
pub fn transition_samples(
    config: GarConfig,
    z_from: f64,
    steps: u32,
    n_draws: usize,
    seed: u64,
) -> Vec<f64> {
    assert!(z_from > 0.0, "transition start must be positive");
    assert!(steps >= 1);
    let mut rng = sampling::rng_from_seed(seed);
    let phi = config.phi;
    let alpha = config.alpha();
    let rho = config.rho;
    (0..n_draws)
        .map(|_| {
            let mut z = z_from;
            for _ in 0..steps {
                z = gar_step(&mut rng, z, phi, alpha, rho);
            }
            z
        })
        .collect()
}

/// Joint density of `(Z_{t+j}, Z_t)` at `(z1, z2)` — the Kibble bivariate
/// gamma with correlation `rho^j` — assembled in log space.
pub fn kibble_density(z1: f64, z2: f64, config: GarConfig, j: u32) -> Result<f64> {
    Ok(kibble_log_density(z1, z2, config, j)?.exp())
}

/// Log of [`kibble_density`].
pub fn kibble_log_density(z1: f64, z2: f64, config: GarConfig, j: u32) -> Result<f64> {
    if !(z1 > 0.0) || !(z2 > 0.0) {
        return Err(Error::domain(format!(
            "kibble_density requires z1, z2 > 0, got ({z1}, {z2})"
        )));
    }
    assert!(j >= 1, "lag must be at least 1");
    let phi = config.phi;
    let r = config.rho.powi(j as i32);
    let omr = 1.0 - r;
    let bessel_arg = 2.0 * phi * (r * z1 * z2).sqrt() / omr;
    let log_bessel = specfun::log_bessel_i(phi - 1.0, bessel_arg, SeriesAccuracy::default())?;
    Ok((phi + 1.0) * phi.ln() - omr.ln() - log_gamma_unchecked(phi)
        + 0.5 * (phi - 1.0) * (z1.ln() + z2.ln() - r.ln())
        - phi * (z1 + z2) / omr
        + log_bessel)
}

/// Conditional moment `E(Z_{t+j}^k | Z_t = z)` in closed form through a
/// generalized Laguerre polynomial.
pub fn conditional_moment(k: u32, z: f64, config: GarConfig, j: u32) -> f64 {
    assert!(k >= 1, "moment order must be at least 1");
    assert!(z > 0.0, "conditioning level must be positive");
    assert!(j >= 1);
    let phi = config.phi;
    let r = config.rho.powi(j as i32);
    let omr = 1.0 - r;
    let mut k_fact = 1.0;
    for i in 2..=k {
        k_fact *= i as f64;
    }
    k_fact * (omr / phi).powi(k as i32) * specfun::laguerre(k, phi - 1.0, -z * phi * r / omr)
}

/// One draw from the Kibble pair via the negative-binomial mixture:
/// `U ~ NegBin(phi, rho^j)` by exact inversion, then two iid gamma draws.
pub fn sample_pair(config: GarConfig, j: u32, seed: u64) -> (f64, f64) {
    let mut rng = sampling::rng_from_seed(seed);
    sample_pair_with(&mut rng, config, j)
}

/// Batch of independent Kibble-pair draws from one seeded stream.
pub fn sample_pairs(config: GarConfig, j: u32, n_draws: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = sampling::rng_from_seed(seed);
    (0..n_draws)
        .map(|_| sample_pair_with(&mut rng, config, j))
        .collect()
}

pub(crate) fn sample_pair_with(rng: &mut Rng, config: GarConfig, j: u32) -> (f64, f64) {
    assert!(j >= 1);
    let phi = config.phi;
    let r = config.rho.powi(j as i32);
    let u = negbin_inverse_cdf(rng, phi, r);
    let rate = phi / (1.0 - r);
    let shape = phi + u as f64;
    (
        sampling::gamma(rng, shape, rate),
        sampling::gamma(rng, shape, rate),
    )
}

// Exact inverse-CDF sampling with the tail cut at cumulative mass
// 1 - 1e-14; beyond the cutoff the largest scanned support point is used.
fn negbin_inverse_cdf(rng: &mut Rng, phi: f64, r: f64) -> u64 {
    let target = sampling::uniform_open(rng) * (1.0 - 1e-14);
    let mut cdf = 0.0;
    let mut u = 0u64;
    loop {
        cdf += negbin_log_pmf(u, phi, r).exp();
        if cdf >= target {
            return u;
        }
        u += 1;
        if u > 100_000_000 {
            return u;
        }
    }
}

/// Conditional Laplace transform `E(exp(-s Z_{t+j}) | Z_t = z)` of the
/// process parameterized by `nu` (latent shape `phi = nu/2`).
pub fn conditional_laplace(
    s: f64,
    z: f64,
    nu: f64,
    rho: f64,
    j: u32,
    acc: SeriesAccuracy,
) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::domain(format!(
            "conditional_laplace requires s > 0, got {s}"
        )));
    }
    if !(z > 0.0) {
        return Err(Error::domain(format!(
            "conditional_laplace requires z > 0, got {z}"
        )));
    }
    assert!(j >= 1);
    let phi = nu / 2.0;
    let r = rho.powi(j as i32);
    let omr = 1.0 - r;
    // Expanding the Bessel series in the transition density and integrating
    // term by term gives terms A^(2k+phi-1) B^-(phi+k) / k! with
    // A = phi sqrt(r z) / (1-r) and B = s + phi/(1-r).
    let log_a = phi.ln() + 0.5 * (r.ln() + z.ln()) - omr.ln();
    let log_b = (s + phi / omr).ln();
    let ratio_base = (2.0 * log_a - log_b).exp();
    let series = specfun::sum_positive_series_log(
        (phi - 1.0) * log_a - phi * log_b,
        |k| ratio_base / (k as f64 + 1.0),
        acc,
        "conditional_laplace",
    )?;
    let log_l = phi.ln() - omr.ln() - 0.5 * (phi - 1.0) * (z.ln() + r.ln()) - phi * z * r / omr
        + series;
    Ok(log_l.exp())
}

/// Conditional inverse moment `E(Z_{t+j}^{-1} | Z_t = z)`; exists only for
/// `nu > 2`.
pub fn conditional_inverse_moment(
    z: f64,
    nu: f64,
    rho: f64,
    j: u32,
    acc: SeriesAccuracy,
) -> Result<f64> {
    if !(nu > 2.0) {
        return Err(Error::domain(format!(
            "conditional inverse moment requires nu > 2, got {nu}"
        )));
    }
    if !(z > 0.0) {
        return Err(Error::domain(format!(
            "conditional_inverse_moment requires z > 0, got {z}"
        )));
    }
    assert!(j >= 1);
    let phi = nu / 2.0;
    let r = rho.powi(j as i32);
    let omr = 1.0 - r;
    let x = phi * z * r / omr;
    // Terms x^k / (k! (phi + k - 1)); positive for phi > 1.
    let log_series = specfun::sum_positive_series_log(
        -(phi - 1.0).ln(),
        |k| {
            let kf = k as f64;
            x * (phi + kf - 1.0) / ((kf + 1.0) * (phi + kf))
        },
        acc,
        "conditional_inverse_moment",
    )?;
    Ok((phi.ln() - omr.ln() - x + log_series).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg(phi: f64, rho: f64) -> GarConfig {
        GarConfig::new(phi, rho).unwrap()
    }

    #[test]
    fn config_rejects_bad_parameters() {
        assert!(GarConfig::new(0.0, 0.5).is_err());
        assert!(GarConfig::new(1.0, 0.0).is_err());
        assert!(GarConfig::new(1.0, 1.0).is_err());
        assert!(GarConfig::new(2.0, 0.3).is_ok());
    }

    #[test]
    fn alpha_exceeds_phi() {
        let c = cfg(2.0, 0.6);
        assert_relative_eq!(c.alpha(), 5.0, max_relative = 1e-15);
        assert!(c.alpha() > c.phi());
    }

    #[test]
    fn simulation_is_reproducible() {
        let c = cfg(1.5, 0.7);
        let a = simulate_gar(c, 500, 9);
        let b = simulate_gar(c, 500, 9);
        assert_eq!(a.values, b.values);
        let d = simulate_gar(c, 500, 10);
        assert_ne!(a.values, d.values);
    }

    #[test]
    fn simulated_values_are_positive() {
        let path = simulate_gar(cfg(0.5, 0.9), 5_000, 21);
        assert!(path.values.iter().all(|&z| z > 0.0));
    }

    #[test]
    fn kibble_density_is_symmetric() {
        let c = cfg(2.0, 0.6);
        let a = kibble_density(0.7, 1.3, c, 1).unwrap();
        let b = kibble_density(1.3, 0.7, c, 1).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn kibble_density_rejects_nonpositive_arguments() {
        let c = cfg(2.0, 0.5);
        assert!(kibble_density(0.0, 1.0, c, 1).is_err());
        assert!(kibble_density(1.0, -0.1, c, 1).is_err());
    }

    #[test]
    fn kibble_density_nonnegative_on_grid() {
        let c = cfg(1.3, 0.8);
        for i in 1..20 {
            for k in 1..20 {
                let v = kibble_density(i as f64 * 0.3, k as f64 * 0.3, c, 2).unwrap();
                assert!(v >= 0.0 && v.is_finite());
            }
        }
    }

    #[test]
    fn kibble_depends_only_on_rho_power() {
        // rho^j enters as a unit: 0.8^2 must match 0.64^1.
        let a = kibble_density(0.9, 1.4, cfg(2.0, 0.8), 2).unwrap();
        let b = kibble_density(0.9, 1.4, cfg(2.0, 0.64), 1).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn conditional_moment_first_order_is_affine() {
        // E(Z_{t+j} | z) = (1 - rho^j) + rho^j z; equals 1 at z = 1.
        let c = cfg(2.0, 0.5);
        assert_relative_eq!(conditional_moment(1, 1.0, c, 1), 1.0, max_relative = 1e-12);
        assert_relative_eq!(conditional_moment(1, 2.0, c, 1), 1.5, max_relative = 1e-12);
        for &(z, j) in &[(0.3, 1u32), (1.7, 2), (4.0, 3)] {
            let r = 0.5_f64.powi(j as i32);
            assert_relative_eq!(
                conditional_moment(1, z, c, j),
                (1.0 - r) + r * z,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn conditional_moment_slope_and_intercept() {
        let c = cfg(3.0, 0.7);
        let j = 2;
        let r = 0.7_f64.powi(2);
        let zs = [0.5, 1.0, 2.5];
        for &z in &zs {
            let m = conditional_moment(1, z, c, j);
            assert_relative_eq!(m, (1.0 - r) + r * z, max_relative = 1e-12);
        }
    }

    #[test]
    fn sample_pair_is_reproducible() {
        let c = cfg(2.0, 0.7);
        assert_eq!(sample_pair(c, 2, 5), sample_pair(c, 2, 5));
    }

    #[test]
    fn laplace_transform_total_mass() {
        // s -> 0+ limit recovers total mass 1.
        for &(z, nu, rho) in &[(1.0, 6.0, 0.5), (0.4, 3.0, 0.8), (2.5, 10.0, 0.2)] {
            let l = conditional_laplace(1e-12, z, nu, rho, 1, SeriesAccuracy::default()).unwrap();
            assert!((l - 1.0).abs() < 1e-8, "L(0+) = {l} at z={z}, nu={nu}");
        }
    }

    #[test]
    fn laplace_derivative_matches_conditional_mean() {
        // -dL/ds at 0 equals E(Z_{t+j} | z); central difference h = 1e-5.
        let (z, nu, rho, j) = (1.3, 6.0, 0.5, 1u32);
        let acc = SeriesAccuracy::default();
        let h = 1e-5;
        let lm = conditional_laplace(h, z, nu, rho, j, acc).unwrap();
        let lp = conditional_laplace(2.0 * h, z, nu, rho, j, acc).unwrap();
        // One-sided second-order difference at s = 0 using L(0) = 1.
        let deriv = (4.0 * lm - lp - 3.0) / (2.0 * h);
        let expect = conditional_moment(1, z, GarConfig::new(nu / 2.0, rho).unwrap(), j);
        assert!(
            (-deriv - expect).abs() < 1e-5,
            "-L'(0) = {} vs E(Z|z) = {expect}",
            -deriv
        );
    }

    #[test]
    fn inverse_moment_independence_limit() {
        // rho^j -> 0 gives E(1/Z) = (nu/2)/(nu/2 - 1) for the stationary law.
        let v = conditional_inverse_moment(1.0, 6.0, 1e-9, 1, SeriesAccuracy::default()).unwrap();
        assert_relative_eq!(v, 1.5, max_relative = 1e-6);
    }

    #[test]
    fn inverse_moment_requires_nu_above_two() {
        assert!(conditional_inverse_moment(1.0, 2.0, 0.5, 1, SeriesAccuracy::default()).is_err());
        let v =
            conditional_inverse_moment(1.0, 4.0001, 0.3, 1, SeriesAccuracy::default()).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }
}
