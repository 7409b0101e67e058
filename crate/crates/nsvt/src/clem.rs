//! Composite-likelihood EM.
//!
//! Holding the degrees of freedom fixed, each iteration computes
//! closed-form conditional expectations of the latent pair
//! (`zeta1 = E(Z_t | pair)`, `zeta2 = E(Z_{t-i} | pair)`, and the mixture
//! count `tau = E(U_ti | pair)`), then maximizes the resulting surrogate:
//! weighted least squares gives `beta` and `sigma2` explicitly, and the
//! persistence update solves a quadratic stationarity equation at order
//! `m = 1` (falling back to a golden-section search otherwise). The
//! surrogate maximization makes the log-pairwise likelihood non-decreasing
//! across iterations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cl::{pairwise_loglik, CompensatedSum, FitResult, Method, TraceEntry};
use crate::model::{NsvtParams, PairwiseCtx, SeriesData};
use crate::specfun::{self, log_gamma_unchecked, SeriesAccuracy};
use crate::{Error, Result};

/// E-step conditional expectations for every pair `(t, t-i)`,
/// `t = m+1..n`, `i = 1..m`. Row `t - m - 1`, column `i - 1` (0-based)
/// holds the pair at time `t` and lag `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairWeights {
    pub zeta1: DMatrix<f64>,
    pub zeta2: DMatrix<f64>,
    pub tau: DMatrix<f64>,
    m: usize,
}

impl PairWeights {
    pub fn order(&self) -> usize {
        self.m
    }

    /// Number of time indices `t` covered (`n - m`).
    pub fn n_times(&self) -> usize {
        self.zeta1.nrows()
    }
}

/// Stopping rule for the outer EM loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StoppingRule {
    /// Parameter change in `(beta, log sigma2, logit rho)` space.
    ParamDelta,
    /// Change in the surrogate value between consecutive iterations.
    QDelta,
}

/// Options for [`clem_fit`]. The degrees of freedom are held fixed for
/// the whole run; estimate them beforehand (pseudo-likelihood or direct
/// composite likelihood) and pass the value here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClemOptions {
    pub nu: f64,
    pub m: usize,
    pub epsilon: f64,
    pub max_iter: usize,
    pub stopping: StoppingRule,
}

impl ClemOptions {
    pub fn new(nu: f64) -> Self {
        ClemOptions {
            nu,
            m: 1,
            epsilon: 1e-6,
            max_iter: 200,
            stopping: StoppingRule::ParamDelta,
        }
    }
}

/// Closed-form E-step: all three expectation families, assembled in log
/// space with the division by the pair density performed last.
pub fn e_step(params: &NsvtParams, data: &SeriesData, m: usize) -> Result<PairWeights> {
    params.validate()?;
    if m == 0 || data.len() <= m {
        return Err(Error::argument(format!(
            "e_step needs 1 <= m < n, got m = {m}, n = {}",
            data.len()
        )));
    }
    let nu = params.nu;
    let sigma2 = params.sigma2;
    let acc = SeriesAccuracy::default();
    let n_rows = data.len() - m;
    let mut zeta1 = DMatrix::zeros(n_rows, m);
    let mut zeta2 = DMatrix::zeros(n_rows, m);
    let mut tau = DMatrix::zeros(n_rows, m);
    let means = data.means(&params.beta);
    let y = data.y();

    let log_gamma_ratio2 = 2.0 * log_gamma_unchecked(nu / 2.0);
    for i in 1..=m {
        let r = params.rho.powi(i as i32);
        let omr = 1.0 - r;
        let ctx = PairwiseCtx::new(params, i as u32, acc);
        let scale = omr / (nu * sigma2);
        // log of 2 (1-r)^(nu/2+2) G((nu+1)/2) G((nu+3)/2) / (pi nu^2 s2 G(nu/2)^2)
        let log_pref_zeta = std::f64::consts::LN_2
            + (nu / 2.0 + 2.0) * omr.ln()
            + log_gamma_unchecked((nu + 1.0) / 2.0)
            + log_gamma_unchecked((nu + 3.0) / 2.0)
            - std::f64::consts::PI.ln()
            - 2.0 * nu.ln()
            - sigma2.ln()
            - log_gamma_ratio2;
        // log of 2 r (1-r)^(nu/2+1) G((nu+3)/2)^2 / (pi nu^2 s2 G(nu/2)^2)
        let log_pref_tau = std::f64::consts::LN_2
            + r.ln()
            + (nu / 2.0 + 1.0) * omr.ln()
            + 2.0 * log_gamma_unchecked((nu + 3.0) / 2.0)
            - std::f64::consts::PI.ln()
            - 2.0 * nu.ln()
            - sigma2.ln()
            - log_gamma_ratio2;

        for t in m..data.len() {
            let s = t - i;
            let d1 = y[t] - means[t];
            let d2 = y[s] - means[s];
            let v1 = 1.0 + scale * d1 * d1;
            let v2 = 1.0 + scale * d2 * d2;
            let zarg = (r / (v1 * v2)).min(1.0 - 1e-15);
            let log_f = ctx.log_density(d1, d2)?;
            if !log_f.is_finite() {
                return Err(Error::Degenerate(format!(
                    "pair density underflowed at (t = {}, i = {i})",
                    t + 1
                )));
            }
            let hyp_zeta =
                specfun::gauss_2f1((nu + 1.0) / 2.0, (nu + 3.0) / 2.0, nu / 2.0, zarg, acc)?;
            let hyp_tau =
                specfun::gauss_2f1((nu + 3.0) / 2.0, (nu + 3.0) / 2.0, nu / 2.0 + 1.0, zarg, acc)?;
            let (lv1, lv2) = (v1.ln(), v2.ln());
            let row = t - m;
            zeta1[(row, i - 1)] = (log_pref_zeta + hyp_zeta.log_value
                - 0.5 * (nu + 3.0) * lv1
                - 0.5 * (nu + 1.0) * lv2
                - log_f)
                .exp();
            zeta2[(row, i - 1)] = (log_pref_zeta + hyp_zeta.log_value
                - 0.5 * (nu + 1.0) * lv1
                - 0.5 * (nu + 3.0) * lv2
                - log_f)
                .exp();
            tau[(row, i - 1)] = (log_pref_tau + hyp_tau.log_value
                - 0.5 * (nu + 3.0) * (lv1 + lv2)
                - log_f)
                .exp();
        }
    }
    Ok(PairWeights {
        zeta1,
        zeta2,
        tau,
        m,
    })
}

/// M-step for the regression block: weighted least squares on the stacked
/// pair system, then the weighted mean-square residual for the scale.
pub fn m_step_beta_sigma(
    weights: &PairWeights,
    data: &SeriesData,
    m: usize,
) -> Result<(Vec<f64>, f64)> {
    if weights.order() != m || weights.n_times() != data.len() - m {
        return Err(Error::argument("weights do not match data and order"));
    }
    let p = data.n_covariates();
    let y = data.y();
    let x = data.x();
    let beta = if p == 0 {
        Vec::new()
    } else {
        let mut xtwx = DMatrix::<f64>::zeros(p, p);
        let mut xtwy = DVector::<f64>::zeros(p);
        let mut row = DVector::<f64>::zeros(p);
        let mut accumulate = |t: usize, w: f64| {
            for k in 0..p {
                row[k] = x[(t, k)];
            }
            xtwx.syger(w, &row, &row, 1.0);
            xtwy.axpy(w * y[t], &row, 1.0);
        };
        for t in m..data.len() {
            for i in 1..=m {
                accumulate(t, weights.zeta1[(t - m, i - 1)]);
                accumulate(t - i, weights.zeta2[(t - m, i - 1)]);
            }
        }
        xtwx.fill_upper_triangle_with_lower_triangle();
        let ch = nalgebra::Cholesky::new(xtwx).ok_or_else(|| {
            Error::Singular("weighted design matrix is rank deficient".into())
        })?;
        ch.solve(&xtwy).iter().copied().collect()
    };

    let means = data.means(&beta);
    let mut rss = CompensatedSum::default();
    for t in m..data.len() {
        for i in 1..=m {
            let d1 = y[t] - means[t];
            let d2 = y[t - i] - means[t - i];
            rss.add(weights.zeta1[(t - m, i - 1)] * d1 * d1);
            rss.add(weights.zeta2[(t - m, i - 1)] * d2 * d2);
        }
    }
    let sigma2 = rss.total() / (2.0 * m as f64 * (data.len() - m) as f64);
    if !(sigma2 > 0.0) {
        return Err(Error::Degenerate(
            "weighted residuals are identically zero; scale update is degenerate".into(),
        ));
    }
    Ok((beta, sigma2))
}

/// Dependence part of the surrogate as a function of `rho`.
pub fn q_dependence(weights: &PairWeights, nu: f64, rho: f64) -> f64 {
    let m = weights.order();
    let n_t = weights.n_times() as f64;
    let mut total = 0.0;
    for i in 1..=m {
        let r = rho.powi(i as i32);
        let omr = 1.0 - r;
        let mut sum_tau = 0.0;
        let mut sum_zeta = 0.0;
        for row in 0..weights.n_times() {
            sum_tau += weights.tau[(row, i - 1)];
            sum_zeta += weights.zeta1[(row, i - 1)] + weights.zeta2[(row, i - 1)];
        }
        total += -(2.0 * sum_tau + n_t * nu / 2.0) * omr.ln() - nu * sum_zeta / (2.0 * omr)
            + sum_tau * i as f64 * rho.ln();
    }
    total
}

/// Observation part of the surrogate (up to terms free of the parameters).
pub fn q_observation(beta: &[f64], sigma2: f64, weights: &PairWeights, data: &SeriesData) -> f64 {
    let m = weights.order();
    let means = data.means(beta);
    let y = data.y();
    let mut total = CompensatedSum::default();
    for t in m..data.len() {
        for i in 1..=m {
            let d1 = y[t] - means[t];
            let d2 = y[t - i] - means[t - i];
            total.add(
                -sigma2.ln()
                    - (weights.zeta1[(t - m, i - 1)] * d1 * d1
                        + weights.zeta2[(t - m, i - 1)] * d2 * d2)
                        / (2.0 * sigma2),
            );
        }
    }
    total.total()
}

/// Full surrogate value `Q(theta; theta_r)` for the given weights.
pub fn q_function(params: &NsvtParams, weights: &PairWeights, data: &SeriesData) -> f64 {
    q_observation(&params.beta, params.sigma2, weights, data)
        + q_dependence(weights, params.nu, params.rho)
}

/// M-step for the persistence parameter.
///
/// At order one the stationarity condition of the dependence surrogate
/// clears denominators into a quadratic, whose admissible root in (0, 1)
/// is returned when it is a maximum; otherwise (and for `m > 1`) a
/// golden-section search maximizes the surrogate directly, clamping to
/// `[1e-6, 1 - 1e-6]` with a warning if the maximum sits on the boundary.
pub fn m_step_rho(weights: &PairWeights, nu: f64, m: usize) -> Result<f64> {
    if weights.order() != m {
        return Err(Error::argument("weights order does not match m"));
    }
    let finite = weights.zeta1.iter().all(|v| v.is_finite())
        && weights.zeta2.iter().all(|v| v.is_finite())
        && weights.tau.iter().all(|v| v.is_finite());
    if !finite {
        return Err(Error::argument("weights must be finite"));
    }
    if m == 1 {
        let n_t = weights.n_times() as f64;
        let sum_tau: f64 = weights.tau.iter().sum();
        let sum_zeta: f64 = weights.zeta1.iter().sum::<f64>() + weights.zeta2.iter().sum::<f64>();
        // d/drho [ -(A) ln(1-rho) - B/(1-rho) + C ln rho ] = 0, cleared by
        // rho (1-rho)^2, gives (C-A) rho^2 + (A-B-2C) rho + C = 0 with
        // A = 2 sum_tau + (n-1) nu/2, B = nu sum_zeta / 2, C = sum_tau.
        let a = 2.0 * sum_tau + n_t * nu / 2.0;
        let b = nu * sum_zeta / 2.0;
        let c = sum_tau;
        if let Some(root) = admissible_quadratic_root(c - a, a - b - 2.0 * c, c) {
            let q = |rho: f64| q_dependence(weights, nu, rho);
            let h = 1e-6;
            if root - h > 0.0 && root + h < 1.0 && q(root) >= q(root - h) && q(root) >= q(root + h)
            {
                return Ok(root);
            }
        }
    }
    golden_section_rho(weights, nu)
}

fn admissible_quadratic_root(a2: f64, a1: f64, a0: f64) -> Option<f64> {
    let in_unit = |r: f64| (r > 0.0 && r < 1.0).then_some(r);
    if a2.abs() < 1e-300 {
        if a1.abs() < 1e-300 {
            return None;
        }
        return in_unit(-a0 / a1);
    }
    let disc = a1 * a1 - 4.0 * a2 * a0;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // Citardauq form for the root that avoids cancellation, then the
    // companion root through the product a0/a2.
    let q = -0.5 * (a1 + a1.signum() * sq);
    let r1 = q / a2;
    let r2 = if q.abs() > 1e-300 { a0 / q } else { f64::NAN };
    match (in_unit(r1), in_unit(r2)) {
        (Some(x), None) => Some(x),
        (None, Some(x)) => Some(x),
        (Some(x), Some(y)) => Some(x.min(y)),
        (None, None) => None,
    }
}

fn golden_section_rho(weights: &PairWeights, nu: f64) -> Result<f64> {
    const LO: f64 = 1e-6;
    const HI: f64 = 1.0 - 1e-6;
    let q = |rho: f64| q_dependence(weights, nu, rho);
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut a = LO;
    let mut b = HI;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut qc, mut qd) = (q(c), q(d));
    while (b - a) > 1e-10 {
        if qc > qd {
            b = d;
            d = c;
            qd = qc;
            c = b - inv_phi * (b - a);
            qc = q(c);
        } else {
            a = c;
            c = d;
            qc = qd;
            d = a + inv_phi * (b - a);
            qd = q(d);
        }
    }
    let rho = 0.5 * (a + b);
    if rho <= LO + 1e-9 || rho >= HI - 1e-9 {
        log::warn!("persistence update hit the boundary; clamping to [{LO}, {HI}]");
    }
    Ok(rho.clamp(LO, HI))
}

/// Runs the EM loop from `init` until the stopping rule fires or the
/// iteration budget is exhausted (in which case `converged` is false and
/// the best iterate is returned). The trace records both the log-pairwise
/// likelihood and the surrogate at every iteration.
pub fn clem_fit(data: &SeriesData, opts: &ClemOptions, init: &NsvtParams) -> Result<FitResult> {
    init.validate()?;
    if !(opts.nu > 0.0) {
        return Err(Error::domain(format!(
            "fixed nu must be positive, got {}",
            opts.nu
        )));
    }
    if !(opts.epsilon > 0.0) {
        return Err(Error::argument("epsilon must be positive"));
    }
    if init.beta.len() != data.n_covariates() {
        return Err(Error::argument(
            "init beta length must match covariate count",
        ));
    }
    let m = opts.m;
    let mut theta = NsvtParams {
        nu: opts.nu,
        ..init.clone()
    };
    let mut trace = Vec::with_capacity(opts.max_iter);
    let mut converged = false;
    for iter in 1..=opts.max_iter {
        let weights = e_step(&theta, data, m)?;
        let q_old = q_function(&theta, &weights, data);
        let (beta, sigma2) = m_step_beta_sigma(&weights, data, m)?;
        let rho = m_step_rho(&weights, opts.nu, m)?;
        let next = NsvtParams {
            beta,
            sigma2,
            nu: opts.nu,
            rho,
        };
        let q_new = q_function(&next, &weights, data);
        let objective = pairwise_loglik(&next, data, m)?;
        if objective.is_finite() {
            trace.push(TraceEntry {
                iteration: iter,
                objective,
                q: Some(q_new),
                params: next.clone(),
            });
        }
        let stop = match opts.stopping {
            StoppingRule::ParamDelta => param_delta(&theta, &next) < opts.epsilon,
            StoppingRule::QDelta => (q_new - q_old).abs() < opts.epsilon,
        };
        theta = next;
        if stop {
            converged = true;
            break;
        }
    }
    let objective = pairwise_loglik(&theta, data, m)?;
    Ok(FitResult {
        params: theta,
        objective,
        trace,
        converged,
        method: Method::Clem,
    })
}

// Scale-free distance in (beta, log sigma2, logit rho) space.
fn param_delta(a: &NsvtParams, b: &NsvtParams) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.beta.iter().zip(&b.beta) {
        s += (x - y).powi(2);
    }
    s += (a.sigma2.ln() - b.sigma2.ln()).powi(2);
    s += (crate::cl::logit(a.rho) - crate::cl::logit(b.rho)).powi(2);
    s.sqrt()
}

/// Convenience initializer: pseudo-likelihood estimates for
/// `(beta, sigma2, nu)` with the persistence started at 0.5.
pub fn pseudo_init(data: &SeriesData) -> Result<(NsvtParams, f64)> {
    let (beta, sigma2, nu) = crate::cl::maximize_pseudo(data)?;
    let init = NsvtParams::new(beta, sigma2, nu, 0.5)?;
    Ok((init, nu))
}
