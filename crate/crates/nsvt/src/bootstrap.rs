//! Parametric bootstrap standard errors and confidence intervals.
//!
//! Trajectories are simulated from the fitted model, re-estimated with the
//! chosen estimator, and the replicate estimates summarized two ways:
//! normal intervals around the original fit and percentile intervals from
//! the empirical replicate quantiles. Replicates run in parallel; each one
//! derives its seed from the master seed by index, so results match the
//! sequential order no matter the thread count, and the first `B'`
//! replicates are unchanged when `B` grows.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::cl::{fit_cl, ClOptions};
use crate::clem::{clem_fit, ClemOptions};
use crate::model::{simulate_nsvt, NsvtParams, SeriesData};
use crate::sampling::split_seed;
use crate::specfun::normal_quantile;
use crate::{Error, Result};

/// Which estimator re-fits each replicate.
#[derive(Debug, Clone)]
pub enum BootstrapEstimator {
    Cl(ClOptions),
    /// The degrees of freedom in the options are ignored: replicates are
    /// re-fit holding `nu` at the fitted value, starting from the fit.
    Clem(ClemOptions),
}

/// Bootstrap output. `replicates` holds one row per *successful*
/// replicate in replicate-index order (`[beta.., sigma2, nu, rho]`);
/// non-converged replicates are dropped and counted in `failures`.
#[derive(Debug, Clone, Serialize)]
pub struct BootstrapResult {
    pub names: Vec<String>,
    pub estimate: Vec<f64>,
    pub replicates: Vec<Vec<f64>>,
    /// Indices (into `0..B`) of the successful replicates.
    pub replicate_index: Vec<usize>,
    pub se: Vec<f64>,
    pub ci_normal: Vec<(f64, f64)>,
    pub ci_percentile: Vec<(f64, f64)>,
    pub level: f64,
    pub failures: usize,
}

/// Simulates `b` trajectories from `fitted` on the given covariates and
/// re-estimates each one.
pub fn parametric_bootstrap(
    fitted: &NsvtParams,
    x: &DMatrix<f64>,
    b: usize,
    level: f64,
    estimator: &BootstrapEstimator,
    seed: u64,
) -> Result<BootstrapResult> {
    if b == 0 {
        return Err(Error::argument("bootstrap needs B >= 1 replications"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::argument(format!(
            "confidence level must be in (0,1), got {level}"
        )));
    }
    fitted.validate()?;

    let outcomes: Vec<Option<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|idx| {
            let rep_seed = split_seed(seed, idx as u64);
            let y = simulate_nsvt(fitted, x, rep_seed).ok()?;
            let data = SeriesData::new(y, x.clone()).ok()?;
            let fit = match estimator {
                BootstrapEstimator::Cl(opts) => fit_cl(&data, opts).ok()?,
                BootstrapEstimator::Clem(opts) => {
                    let opts = ClemOptions {
                        nu: fitted.nu,
                        ..opts.clone()
                    };
                    clem_fit(&data, &opts, fitted).ok()?
                }
            };
            fit.converged.then(|| fit.params.to_vec())
        })
        .collect();

    let mut replicates = Vec::new();
    let mut replicate_index = Vec::new();
    for (idx, row) in outcomes.into_iter().enumerate() {
        if let Some(r) = row {
            replicates.push(r);
            replicate_index.push(idx);
        }
    }
    let failures = b - replicates.len();
    if replicates.is_empty() {
        return Err(Error::Degenerate(format!(
            "all {b} bootstrap replicates failed to converge"
        )));
    }

    let dim = fitted.beta.len() + 3;
    let estimate = fitted.to_vec();
    let succ = replicates.len();
    let mut se = Vec::with_capacity(dim);
    let mut ci_normal = Vec::with_capacity(dim);
    let mut ci_percentile = Vec::with_capacity(dim);
    let z = normal_quantile(1.0 - (1.0 - level) / 2.0)?;
    for k in 0..dim {
        let col: Vec<f64> = replicates.iter().map(|r| r[k]).collect();
        let mean = col.iter().sum::<f64>() / succ as f64;
        let sd = if succ > 1 {
            (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (succ - 1) as f64).sqrt()
        } else {
            0.0
        };
        se.push(sd);
        ci_normal.push((estimate[k] - z * sd, estimate[k] + z * sd));
        ci_percentile.push(percentile_interval(&col, level));
    }

    Ok(BootstrapResult {
        names: NsvtParams::component_names(fitted.beta.len()),
        estimate,
        replicates,
        replicate_index,
        se,
        ci_normal,
        ci_percentile,
        level,
        failures,
    })
}

/// Percentile interval whose endpoints are order statistics of the column
/// (nearest-rank quantiles).
fn percentile_interval(col: &[f64], level: f64) -> (f64, f64) {
    let mut sorted = col.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let s = sorted.len();
    let alpha = 1.0 - level;
    let rank = |q: f64| -> usize {
        let k = (q * s as f64).ceil() as usize;
        k.clamp(1, s) - 1
    };
    (sorted[rank(alpha / 2.0)], sorted[rank(1.0 - alpha / 2.0)])
}

impl BootstrapResult {
    /// Flat CSV with one row per successful replicate.
    pub fn write_replicates_csv<W: std::io::Write>(&self, w: W) -> std::io::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["replicate".to_string()];
        header.extend(self.names.iter().cloned());
        wtr.write_record(&header)?;
        for (idx, row) in self.replicate_index.iter().zip(&self.replicates) {
            let mut rec = vec![idx.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:.17e}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()
    }

    /// Summary without the replicate matrix.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "level": self.level,
            "failures": self.failures,
            "successes": self.replicates.len(),
            "parameters": self.names.iter().enumerate().map(|(k, name)| {
                serde_json::json!({
                    "name": name,
                    "estimate": self.estimate[k],
                    "se": self.se[k],
                    "ci_normal": [self.ci_normal[k].0, self.ci_normal[k].1],
                    "ci_percentile": [self.ci_percentile[k].0, self.ci_percentile[k].1],
                })
            }).collect::<Vec<_>>(),
        })
    }
}
