//! The Student-t stochastic volatility response model.
//!
//! Conditionally on a latent gamma AR(1) path `Z_t` (shape `nu/2`,
//! persistence `rho`), each observation is normal with mean `x_t' beta`
//! and variance `sigma2 / Z_t`. Marginally every `Y_t` is location-scale
//! Student-t with `nu` degrees of freedom, and any pair `(Y_t, Y_{t-j})`
//! has the closed-form joint density implemented by [`pairwise_density`]:
//! a Student-t product kernel `omega` raised to `(nu+1)/2` times a Gauss
//! hypergeometric factor with argument `rho^j * omega < 1`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::gar::{self, GarConfig};
use crate::sampling::{self, Rng};
use crate::specfun::{self, log_gamma_unchecked, SeriesAccuracy};
use crate::{Error, Result};

/// Full parameter vector of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsvtParams {
    /// Regression coefficients, one per covariate column.
    pub beta: Vec<f64>,
    /// Scale of the conditional normal; must be positive.
    pub sigma2: f64,
    /// Degrees of freedom of the marginal Student-t; must be positive.
    pub nu: f64,
    /// Volatility persistence in (0, 1).
    pub rho: f64,
}

impl NsvtParams {
    pub fn new(beta: Vec<f64>, sigma2: f64, nu: f64, rho: f64) -> Result<Self> {
        let p = NsvtParams {
            beta,
            sigma2,
            nu,
            rho,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::domain("beta must be finite"));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::domain(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::domain(format!("nu must be positive, got {}", self.nu)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::domain(format!(
                "rho must be in (0,1), got {}",
                self.rho
            )));
        }
        Ok(())
    }

    /// Latent process implied by these parameters (`phi = nu/2`).
    pub fn gar_config(&self) -> GarConfig {
        GarConfig::new(self.nu / 2.0, self.rho).expect("validated parameters")
    }

    /// Flattens to `[beta.., sigma2, nu, rho]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.push(self.sigma2);
        v.push(self.nu);
        v.push(self.rho);
        v
    }

    /// Names matching [`Self::to_vec`] ordering.
    pub fn component_names(p: usize) -> Vec<String> {
        let mut names: Vec<String> = (1..=p).map(|j| format!("beta{j}")).collect();
        names.push("sigma2".to_string());
        names.push("nu".to_string());
        names.push("rho".to_string());
        names
    }
}

/// Observed response series with its covariate matrix (row `t` is `x_t'`).
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesData {
    y: Vec<f64>,
    x: DMatrix<f64>,
}

impl SeriesData {
    /// Requires at least two observations, matching row counts, and finite
    /// entries throughout.
    pub fn new(y: Vec<f64>, x: DMatrix<f64>) -> Result<Self> {
        if y.len() < 2 {
            return Err(Error::argument(format!(
                "series needs at least 2 observations, got {}",
                y.len()
            )));
        }
        if x.nrows() != y.len() {
            return Err(Error::argument(format!(
                "covariate rows ({}) must match series length ({})",
                x.nrows(),
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("series and covariates must be finite"));
        }
        Ok(SeriesData { y, x })
    }

    /// A series with no covariates (`mu_t = 0` throughout).
    pub fn without_covariates(y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        SeriesData::new(y, DMatrix::zeros(n, 0))
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// `mu_t = x_t' beta`.
    pub fn mean_at(&self, t: usize, beta: &[f64]) -> f64 {
        debug_assert_eq!(beta.len(), self.x.ncols());
        let mut mu = 0.0;
        for (k, b) in beta.iter().enumerate() {
            mu += self.x[(t, k)] * b;
        }
        mu
    }

    /// All fitted means at once.
    pub fn means(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|t| self.mean_at(t, beta)).collect()
    }
}

/// Simulates the response given covariates: a latent path with
/// `phi = nu/2`, then `y_t ~ N(x_t' beta, sigma2 / z_t)`. Deterministic
/// given the seed.
pub fn simulate_nsvt(params: &NsvtParams, x: &DMatrix<f64>, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    if x.nrows() == 0 {
        return Err(Error::argument("covariate matrix must be nonempty"));
    }
    if x.ncols() != params.beta.len() {
        return Err(Error::argument(format!(
            "covariate columns ({}) must match beta length ({})",
            x.ncols(),
            params.beta.len()
        )));
    }
    let mut rng = sampling::rng_from_seed(seed);
    Ok(simulate_nsvt_with(&mut rng, params, x))
}

pub(crate) fn simulate_nsvt_with(rng: &mut Rng, params: &NsvtParams, x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows();
    let latent = gar::simulate_gar_with(rng, params.gar_config(), n);
    let sd_base = params.sigma2.sqrt();
    (0..n)
        .map(|t| {
            let mut mu = 0.0;
            for (k, b) in params.beta.iter().enumerate() {
                mu += x[(t, k)] * b;
            }
            mu + sd_base / latent[t].sqrt() * sampling::standard_normal(rng)
        })
        .collect()
}

/// Location-scale Student-t density.
pub fn student_t_pdf(y: f64, mu: f64, sigma2: f64, nu: f64) -> f64 {
    student_t_log_pdf(y, mu, sigma2, nu).exp()
}

/// Log of [`student_t_pdf`].
pub fn student_t_log_pdf(y: f64, mu: f64, sigma2: f64, nu: f64) -> f64 {
    assert!(sigma2 > 0.0 && nu > 0.0);
    let z2 = (y - mu) * (y - mu) / sigma2;
    log_gamma_unchecked((nu + 1.0) / 2.0)
        - log_gamma_unchecked(nu / 2.0)
        - 0.5 * (std::f64::consts::PI * nu * sigma2).ln()
        - 0.5 * (nu + 1.0) * (z2 / nu).ln_1p()
}

/// Location-scale Student-t CDF through the regularized incomplete beta
/// continued fraction.
pub fn student_t_cdf(y: f64, mu: f64, sigma2: f64, nu: f64) -> f64 {
    assert!(sigma2 > 0.0 && nu > 0.0);
    let t = (y - mu) / sigma2.sqrt();
    if t == 0.0 {
        return 0.5;
    }
    let ib = specfun::reg_inc_beta(nu / (nu + t * t), nu / 2.0, 0.5)
        .expect("arguments in range by construction");
    if t > 0.0 {
        1.0 - 0.5 * ib
    } else {
        0.5 * ib
    }
}

/// The product kernel `omega(y1, y2)` in (0, 1]: each factor is the
/// reciprocal of `1 + (1-rho^j)(y-mu)^2/(nu sigma2)`.
pub fn omega(y1: f64, y2: f64, mu1: f64, mu2: f64, params: &NsvtParams, j: u32) -> f64 {
    let r = params.rho.powi(j as i32);
    let scale = (1.0 - r) / (params.nu * params.sigma2);
    let v1 = 1.0 + scale * (y1 - mu1) * (y1 - mu1);
    let v2 = 1.0 + scale * (y2 - mu2) * (y2 - mu2);
    1.0 / (v1 * v2)
}

/// Per-parameter constants of the pairwise density, hoisted out of the
/// inner loop of the composite likelihood.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PairwiseCtx {
    pub r: f64,
    pub scale: f64,
    pub half_nu_plus: f64,
    pub a: f64,
    pub c: f64,
    pub log_pref: f64,
    pub acc: SeriesAccuracy,
}

impl PairwiseCtx {
    pub fn new(params: &NsvtParams, j: u32, acc: SeriesAccuracy) -> Self {
        let nu = params.nu;
        let r = params.rho.powi(j as i32);
        let log_pref = (nu / 2.0 + 1.0) * (1.0 - r).ln()
            - (std::f64::consts::PI * nu * params.sigma2).ln()
            + 2.0 * (log_gamma_unchecked((nu + 1.0) / 2.0) - log_gamma_unchecked(nu / 2.0));
        PairwiseCtx {
            r,
            scale: (1.0 - r) / (nu * params.sigma2),
            half_nu_plus: (nu + 1.0) / 2.0,
            a: (nu + 1.0) / 2.0,
            c: nu / 2.0,
            log_pref,
            acc,
        }
    }

    /// Log joint density of a centered pair `(d1, d2) = (y1-mu1, y2-mu2)`.
    pub fn log_density(&self, d1: f64, d2: f64) -> Result<f64> {
        let v1 = 1.0 + self.scale * d1 * d1;
        let v2 = 1.0 + self.scale * d2 * d2;
        let omega = 1.0 / (v1 * v2);
        // Guard roundoff at y = mu so the 2F1 argument stays inside [0,1).
        let zarg = (self.r * omega).min(1.0 - 1e-15);
        let hyp = specfun::gauss_2f1(self.a, self.a, self.c, zarg, self.acc)?;
        Ok(self.log_pref + self.half_nu_plus * omega.ln() + hyp.log_value)
    }
}

/// Joint density of `(Y_{t+j}, Y_t)` evaluated at `(y1, y2)` with means
/// `(mu1, mu2)`. Returns `(density, log_density)`; the log is assembled
/// entirely in log space.
pub fn pairwise_density(
    y1: f64,
    y2: f64,
    mu1: f64,
    mu2: f64,
    params: &NsvtParams,
    j: u32,
    acc: SeriesAccuracy,
) -> Result<(f64, f64)> {
    if !(params.rho > 0.0 && params.rho < 1.0) {
        return Err(Error::domain(format!(
            "pairwise density requires rho in (0,1), got {}",
            params.rho
        )));
    }
    assert!(j >= 1, "lag must be at least 1");
    let ctx = PairwiseCtx::new(params, j, acc);
    let log_density = ctx.log_density(y1 - mu1, y2 - mu2)?;
    Ok((log_density.exp(), log_density))
}

/// Conditional variance `Var(Y_{t+j} | Y_t = y_t)` for `nu > 2`.
///
/// Computed as
/// `sigma2 * nu/(2(1-rho^j)) * (1-w)^((nu+1)/2) * Gamma(nu/2-1)/Gamma(nu/2)
///  * 2F1((nu+1)/2, nu/2-1; nu/2; w)` with
/// `w = rho^j / (1 + (1-rho^j)(y_t-mu_t)^2/(nu sigma2))`, obtained by
/// integrating the conditional inverse moment of the latent process
/// against the gamma posterior of `Z_t` given `Y_t`. This form reduces to
/// the marginal Student-t variance `sigma2 nu/(nu-2)` as the dependence
/// vanishes, which pins down the normalization; see
/// [`conditional_variance_alt`] for the alternative confluent form kept
/// for comparison.
///
/// `mu_pred` is the mean at the forecast horizon (`x_{t+j}' beta`); it
/// must be supplied by the caller — covariates are never extrapolated —
/// and does not move the variance itself, only the center of the
/// predictive interval built from it.
pub fn conditional_variance(
    y_t: f64,
    mu_t: f64,
    mu_pred: f64,
    params: &NsvtParams,
    j: u32,
    acc: SeriesAccuracy,
) -> Result<f64> {
    if !(params.nu > 2.0) {
        return Err(Error::domain(format!(
            "conditional variance requires nu > 2, got {}",
            params.nu
        )));
    }
    if !mu_pred.is_finite() {
        return Err(Error::argument("forecast-horizon mean must be finite"));
    }
    assert!(j >= 1);
    let nu = params.nu;
    let r = params.rho.powi(j as i32);
    let w = cond_var_weight(y_t, mu_t, params, r);
    let hyp = specfun::gauss_2f1((nu + 1.0) / 2.0, nu / 2.0 - 1.0, nu / 2.0, w, acc)?;
    let log_var = params.sigma2.ln() + (nu / (2.0 * (1.0 - r))).ln()
        + 0.5 * (nu + 1.0) * (-w).ln_1p()
        + log_gamma_unchecked(nu / 2.0 - 1.0)
        - log_gamma_unchecked(nu / 2.0)
        + hyp.log_value;
    Ok(log_var.exp())
}

/// Alternative confluent-hypergeometric expression for the conditional
/// variance, retained for side-by-side comparison. It does **not** reduce
/// to the marginal variance in the independence limit (e.g. at `nu = 6`,
/// `rho -> 0` it gives `3 sigma2` instead of `1.5 sigma2`), which is why
/// [`conditional_variance`] is the production formula.
pub fn conditional_variance_alt(
    y_t: f64,
    mu_t: f64,
    params: &NsvtParams,
    j: u32,
    acc: SeriesAccuracy,
) -> Result<f64> {
    if !(params.nu > 2.0) {
        return Err(Error::domain(format!(
            "conditional variance requires nu > 2, got {}",
            params.nu
        )));
    }
    assert!(j >= 1);
    let nu = params.nu;
    let r = params.rho.powi(j as i32);
    let w = cond_var_weight(y_t, mu_t, params, r);
    let kummer = specfun::kummer_1f1((nu + 1.0) / 2.0, nu / 2.0 - 1.0, w, acc)?;
    Ok(params.sigma2 * nu * (1.0 - w).powf((nu + 1.0) / 2.0)
        / (2.0 * (1.0 - r) * log_gamma_unchecked(nu / 2.0 - 1.0).exp())
        * kummer)
}

#[inline]
fn cond_var_weight(y_t: f64, mu_t: f64, params: &NsvtParams, r: f64) -> f64 {
    let d = y_t - mu_t;
    (r / (1.0 + (1.0 - r) * d * d / (params.nu * params.sigma2))).min(1.0 - 1e-15)
}
