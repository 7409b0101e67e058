//! Market-neutral factor-portfolio workflow.
//!
//! Bar or return CSVs become a [`ReturnPanel`]; a [`WindowPlan`] slices it
//! into rolling training/evaluation windows; each training window is
//! standardized by its own statistics; per-stock regressions on the factor
//! columns are fit by composite likelihood or EM; and two-asset weights
//! are chosen either by exact single-factor neutrality or by a small
//! linear program over the budget line. Evaluation reports the cumulative
//! weighted return over each window's evaluation rows.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cl::{fit_cl, ClOptions, FitResult};
use crate::clem::{clem_fit, pseudo_init, ClemOptions};
use crate::model::SeriesData;
use crate::{Error, Result};

/// Ingestion schema: bar files carry prices, return files carry returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSchema {
    Bar,
    Return,
}

/// Intraday session filter, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionWindow {
    pub start: NaiveTime,
    pub end: NaiveTime,
}

impl Default for SessionWindow {
    fn default() -> Self {
        SessionWindow {
            start: NaiveTime::from_hms_opt(9, 30, 0).unwrap(),
            end: NaiveTime::from_hms_opt(15, 30, 0).unwrap(),
        }
    }
}

/// Aligned return matrix with labels and strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    timestamps: Vec<NaiveDateTime>,
    returns: DMatrix<f64>,
    labels: Vec<String>,
    dropped_rows: usize,
}

impl ReturnPanel {
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        returns: DMatrix<f64>,
        labels: Vec<String>,
    ) -> Result<Self> {
        if timestamps.len() != returns.nrows() {
            return Err(Error::argument("timestamp count must match row count"));
        }
        if labels.len() != returns.ncols() {
            return Err(Error::argument("label count must match column count"));
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data {
                line: None,
                what: "timestamps must be strictly increasing".into(),
            });
        }
        if returns.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data {
                line: None,
                what: "panel contains non-finite returns".into(),
            });
        }
        Ok(ReturnPanel {
            timestamps,
            returns,
            labels,
            dropped_rows: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_columns(&self) -> usize {
        self.returns.ncols()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    /// Rows that were dropped during ingestion because of gaps.
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn column_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::argument(format!("no column labelled '{label}'")))
    }

    /// Distinct session dates in row order.
    pub fn dates(&self) -> Vec<NaiveDate> {
        let mut dates = Vec::new();
        for ts in &self.timestamps {
            let d = ts.date();
            if dates.last() != Some(&d) {
                dates.push(d);
            }
        }
        dates
    }

    /// Compounds the selected columns into one simple return per date over
    /// the half-open row range.
    pub fn daily_compound_returns(
        &self,
        rows: (usize, usize),
        cols: &[usize],
    ) -> (Vec<NaiveDate>, DMatrix<f64>) {
        let mut by_date: BTreeMap<NaiveDate, Vec<f64>> = BTreeMap::new();
        for t in rows.0..rows.1 {
            let entry = by_date
                .entry(self.timestamps[t].date())
                .or_insert_with(|| vec![1.0; cols.len()]);
            for (k, &c) in cols.iter().enumerate() {
                entry[k] *= 1.0 + self.returns[(t, c)];
            }
        }
        let dates: Vec<NaiveDate> = by_date.keys().copied().collect();
        let mut mat = DMatrix::zeros(dates.len(), cols.len());
        for (i, (_, growth)) in by_date.into_iter().enumerate() {
            for (k, g) in growth.into_iter().enumerate() {
                mat[(i, k)] = g - 1.0;
            }
        }
        (dates, mat)
    }
}

/// Loads a CSV with header `timestamp,<label>,...`. Bar files are turned
/// into simple returns between consecutive retained rows; rows with any
/// missing field are dropped and counted. Timestamps must parse as
/// ISO-8601 and be strictly increasing.
pub fn load_returns(
    path: impl AsRef<Path>,
    schema: InputSchema,
    session: Option<SessionWindow>,
) -> Result<ReturnPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path.as_ref())
        .map_err(|e| Error::Data {
            line: None,
            what: format!("cannot open {}: {e}", path.as_ref().display()),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data {
            line: Some(1),
            what: format!("bad header: {e}"),
        })?
        .clone();
    if headers.len() < 2 || headers.get(0) != Some("timestamp") {
        return Err(Error::Data {
            line: Some(1),
            what: "header must be 'timestamp,<symbol>,...'".into(),
        });
    }
    let labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let n_cols = labels.len();

    let mut timestamps: Vec<NaiveDateTime> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0usize;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| Error::Data {
            line: Some(line),
            what: format!("malformed row: {e}"),
        })?;
        let ts_raw = record.get(0).unwrap_or("");
        let ts = parse_timestamp(ts_raw).ok_or_else(|| Error::Data {
            line: Some(line),
            what: format!("unparseable timestamp '{ts_raw}'"),
        })?;
        if let Some(last) = timestamps.last() {
            if rows_in_session(&ts, session) && ts <= *last {
                return Err(Error::Data {
                    line: Some(line),
                    what: format!("timestamps not strictly increasing at '{ts_raw}'"),
                });
            }
        }
        if !rows_in_session(&ts, session) {
            continue;
        }
        if record.len() != n_cols + 1 {
            dropped += 1;
            continue;
        }
        let mut row = Vec::with_capacity(n_cols);
        let mut gap = false;
        for field in record.iter().skip(1) {
            match field.trim() {
                "" => {
                    gap = true;
                    break;
                }
                v => match v.parse::<f64>() {
                    Ok(x) if x.is_finite() => row.push(x),
                    Ok(_) => {
                        gap = true;
                        break;
                    }
                    Err(e) => {
                        return Err(Error::Data {
                            line: Some(line),
                            what: format!("bad numeric field '{v}': {e}"),
                        })
                    }
                },
            }
        }
        if gap {
            dropped += 1;
            continue;
        }
        timestamps.push(ts);
        rows.push(row);
    }

    let (timestamps, data) = match schema {
        InputSchema::Return => (timestamps, rows),
        InputSchema::Bar => {
            let mut out_ts = Vec::new();
            let mut out = Vec::new();
            for t in 1..rows.len() {
                let mut r = Vec::with_capacity(n_cols);
                for c in 0..n_cols {
                    let prev = rows[t - 1][c];
                    if prev == 0.0 {
                        return Err(Error::Data {
                            line: None,
                            what: format!(
                                "zero price in column '{}' prevents return computation",
                                labels[c]
                            ),
                        });
                    }
                    r.push(rows[t][c] / prev - 1.0);
                }
                out_ts.push(timestamps[t]);
                out.push(r);
            }
            (out_ts, out)
        }
    };

    let n = timestamps.len();
    let mut returns = DMatrix::zeros(n, n_cols);
    for (t, row) in data.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            returns[(t, c)] = *v;
        }
    }
    let mut panel = ReturnPanel::new(timestamps, returns, labels)?;
    panel.dropped_rows = dropped;
    Ok(panel)
}

fn rows_in_session(ts: &NaiveDateTime, session: Option<SessionWindow>) -> bool {
    match session {
        None => true,
        Some(s) => {
            let t = ts.time();
            t >= s.start && t <= s.end
        }
    }
}

fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S"))
        .ok()
        .or_else(|| {
            chrono::DateTime::parse_from_rfc3339(raw)
                .ok()
                .map(|dt| dt.naive_local())
        })
}

/// Rolling training/evaluation index ranges (half-open).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub training: Vec<(usize, usize)>,
    pub evaluation: Vec<(usize, usize)>,
}

impl WindowPlan {
    pub fn new(training: Vec<(usize, usize)>, evaluation: Vec<(usize, usize)>) -> Result<Self> {
        if training.len() != evaluation.len() {
            return Err(Error::argument(
                "training and evaluation window counts must match",
            ));
        }
        for ((ts, te), (es, ee)) in training.iter().zip(&evaluation) {
            if ts >= te || es >= ee {
                return Err(Error::argument("windows must be nonempty"));
            }
            if es < te {
                return Err(Error::argument(
                    "evaluation must follow its training window",
                ));
            }
        }
        Ok(WindowPlan {
            training,
            evaluation,
        })
    }

    pub fn n_windows(&self) -> usize {
        self.training.len()
    }

    pub fn observations_per_window(&self) -> Vec<usize> {
        self.training.iter().map(|(s, e)| e - s).collect()
    }

    /// Builds consecutive-day windows: window `w` trains on session days
    /// `w .. w + train_days` and evaluates on the following `eval_days`.
    pub fn from_daily_sessions(
        panel: &ReturnPanel,
        n_windows: usize,
        train_days: usize,
        eval_days: usize,
    ) -> Result<Self> {
        if n_windows == 0 || train_days == 0 || eval_days == 0 {
            return Err(Error::argument("window plan dimensions must be positive"));
        }
        let dates = panel.dates();
        let needed = n_windows - 1 + train_days + eval_days;
        if dates.len() < needed {
            return Err(Error::argument(format!(
                "plan needs {needed} session days, data has {}",
                dates.len()
            )));
        }
        // First row index of each date, plus the end sentinel.
        let mut day_start = Vec::with_capacity(dates.len() + 1);
        let mut current: Option<NaiveDate> = None;
        for (t, ts) in panel.timestamps().iter().enumerate() {
            if current != Some(ts.date()) {
                day_start.push(t);
                current = Some(ts.date());
            }
        }
        day_start.push(panel.len());
        let mut training = Vec::with_capacity(n_windows);
        let mut evaluation = Vec::with_capacity(n_windows);
        for w in 0..n_windows {
            training.push((day_start[w], day_start[w + train_days]));
            evaluation.push((
                day_start[w + train_days],
                day_start[w + train_days + eval_days],
            ));
        }
        WindowPlan::new(training, evaluation)
    }
}

/// One window's standardized slice: training rows centered and scaled by
/// their own statistics, evaluation rows scaled by the same statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedWindow {
    pub train: ReturnPanel,
    pub eval: ReturnPanel,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

/// Standardizes window `w` of the plan.
pub fn standardize(panel: &ReturnPanel, plan: &WindowPlan, w: usize) -> Result<StandardizedWindow> {
    let (ts, te) = *plan
        .training
        .get(w)
        .ok_or_else(|| Error::argument(format!("window {w} out of range")))?;
    let (es, ee) = plan.evaluation[w];
    if te - ts < 2 {
        return Err(Error::argument(format!(
            "training window {w} needs at least 2 observations"
        )));
    }
    let r = panel.returns();
    let n_cols = panel.n_columns();
    let mut means = Vec::with_capacity(n_cols);
    let mut sds = Vec::with_capacity(n_cols);
    let n_train = (te - ts) as f64;
    for c in 0..n_cols {
        let mean = (ts..te).map(|t| r[(t, c)]).sum::<f64>() / n_train;
        let var = (ts..te).map(|t| (r[(t, c)] - mean).powi(2)).sum::<f64>() / (n_train - 1.0);
        if var <= 0.0 {
            return Err(Error::Degenerate(format!(
                "column '{}' has zero variance in training window {w}",
                panel.labels()[c]
            )));
        }
        means.push(mean);
        sds.push(var.sqrt());
    }
    let slice = |lo: usize, hi: usize| -> ReturnPanel {
        let mut m = DMatrix::zeros(hi - lo, n_cols);
        for t in lo..hi {
            for c in 0..n_cols {
                m[(t - lo, c)] = (r[(t, c)] - means[c]) / sds[c];
            }
        }
        ReturnPanel {
            timestamps: panel.timestamps[lo..hi].to_vec(),
            returns: m,
            labels: panel.labels.clone(),
            dropped_rows: 0,
        }
    };
    Ok(StandardizedWindow {
        train: slice(ts, te),
        eval: slice(es, ee),
        means,
        sds,
    })
}

/// Estimator used for the per-stock factor regressions.
#[derive(Debug, Clone)]
pub enum FactorEstimator {
    Cl(ClOptions),
    /// EM with the degrees of freedom estimated per window by the marginal
    /// pseudo-likelihood.
    Clem(ClemOptions),
}

/// Fits one regression per stock per window on the standardized panel.
pub fn fit_factor_regressions(
    panel: &ReturnPanel,
    plan: &WindowPlan,
    stocks: &[String],
    factors: &[String],
    estimator: &FactorEstimator,
) -> Result<Vec<Vec<FitResult>>> {
    if stocks.is_empty() || factors.is_empty() {
        return Err(Error::argument("need at least one stock and one factor"));
    }
    let stock_cols: Vec<usize> = stocks
        .iter()
        .map(|s| panel.column_index(s))
        .collect::<Result<_>>()?;
    let factor_cols: Vec<usize> = factors
        .iter()
        .map(|s| panel.column_index(s))
        .collect::<Result<_>>()?;
    let p = factor_cols.len();
    let mut all = Vec::with_capacity(plan.n_windows());
    for w in 0..plan.n_windows() {
        let (ts, te) = plan.training[w];
        if te - ts < p + 2 {
            return Err(Error::argument(format!(
                "training window {w} has {} rows; needs at least p + 2 = {}",
                te - ts,
                p + 2
            )));
        }
        let std_w = standardize(panel, plan, w)?;
        let train = &std_w.train;
        let x = DMatrix::from_fn(train.len(), p, |t, k| train.returns()[(t, factor_cols[k])]);
        let mut fits = Vec::with_capacity(stock_cols.len());
        for &sc in &stock_cols {
            let y: Vec<f64> = (0..train.len()).map(|t| train.returns()[(t, sc)]).collect();
            let data = SeriesData::new(y, x.clone())?;
            let fit = match estimator {
                FactorEstimator::Cl(opts) => fit_cl(&data, opts)?,
                FactorEstimator::Clem(opts) => {
                    let (init, nu) = pseudo_init(&data)?;
                    let opts = ClemOptions { nu, ..opts.clone() };
                    clem_fit(&data, &opts, &init)?
                }
            };
            fits.push(fit);
        }
        all.push(fits);
    }
    Ok(all)
}

/// Which factor exposures the optimizer constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorSelection {
    Single(usize),
    All,
}

/// Optimization mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizeMode {
    /// Exact neutrality on one factor plus the budget constraint. Unique
    /// closed-form weights.
    EqualityNeutral,
    /// Maximize cumulative training return subject to the budget line,
    /// `|w' beta_j| <= delta` for the selected factors, and a weight box.
    InequalityLp,
}

/// Optimized weights with the constraint that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSolution {
    pub weights: Vec<f64>,
    /// Cumulative weighted return over the optimization period.
    pub objective: f64,
    pub binding: Vec<String>,
    pub mode: OptimizeMode,
}

/// Two-asset weight optimization. `beta` is M x p (one row per stock);
/// `training_returns` is n x M over the optimization period.
pub fn optimize_portfolio(
    beta: &DMatrix<f64>,
    training_returns: &DMatrix<f64>,
    delta: f64,
    factor: FactorSelection,
    mode: OptimizeMode,
    weight_box: f64,
) -> Result<PortfolioSolution> {
    let m = beta.nrows();
    if m != 2 {
        return Err(Error::argument(format!(
            "only two-asset portfolios are supported, got M = {m}"
        )));
    }
    if training_returns.ncols() != 2 {
        return Err(Error::argument("training returns must have two columns"));
    }
    if !(delta > 0.0) {
        return Err(Error::argument("delta must be positive"));
    }
    if !(weight_box > 0.0) {
        return Err(Error::argument("weight box must be positive"));
    }
    let sums: Vec<f64> = (0..2)
        .map(|c| (0..training_returns.nrows()).map(|t| training_returns[(t, c)]).sum())
        .collect();
    match mode {
        OptimizeMode::EqualityNeutral => {
            let FactorSelection::Single(j) = factor else {
                return Err(Error::argument(
                    "equality neutrality needs a single factor; use the LP mode for all-factor \
                     constraints",
                ));
            };
            if j >= beta.ncols() {
                return Err(Error::argument(format!("factor index {j} out of range")));
            }
            let (b1, b2) = (beta[(0, j)], beta[(1, j)]);
            if b1 == b2 {
                return Err(Error::Singular(format!(
                    "neutrality is singular: both stocks share exposure {b1} to factor {j}"
                )));
            }
            let w1 = b2 / (b2 - b1);
            let w2 = 1.0 - w1;
            Ok(PortfolioSolution {
                weights: vec![w1, w2],
                objective: w1 * sums[0] + w2 * sums[1],
                binding: vec![format!("neutrality(factor {j})"), "budget".to_string()],
                mode,
            })
        }
        OptimizeMode::InequalityLp => {
            let selected: Vec<usize> = match factor {
                FactorSelection::Single(j) => {
                    if j >= beta.ncols() {
                        return Err(Error::argument(format!("factor index {j} out of range")));
                    }
                    vec![j]
                }
                FactorSelection::All => (0..beta.ncols()).collect(),
            };
            // Substitute w2 = 1 - w1; every constraint is an interval in w1.
            let mut lo = (-weight_box).max(1.0 - weight_box);
            let mut hi = weight_box.min(1.0 + weight_box);
            let mut lo_name = "weight_box".to_string();
            let mut hi_name = "weight_box".to_string();
            let mut violated = Vec::new();
            for j in selected {
                let (b1, b2) = (beta[(0, j)], beta[(1, j)]);
                let span = b1 - b2;
                let name = format!("neutrality(factor {j})");
                if span.abs() < 1e-300 {
                    if b2.abs() > delta {
                        violated.push(format!("{name}: fixed exposure {b2} exceeds delta"));
                    }
                    continue;
                }
                let mut a = (-delta - b2) / span;
                let mut b = (delta - b2) / span;
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                }
                if a > lo {
                    lo = a;
                    lo_name = name.clone();
                }
                if b < hi {
                    hi = b;
                    hi_name = name.clone();
                }
                if lo > hi {
                    violated.push(name);
                }
            }
            if !violated.is_empty() || lo > hi {
                if violated.is_empty() {
                    violated.push("weight_box".to_string());
                }
                return Err(Error::Infeasible { violated });
            }
            // Linear objective on [lo, hi]: the optimum sits at a vertex.
            let slope = sums[0] - sums[1];
            let (w1, binding) = if slope > 0.0 {
                (hi, hi_name)
            } else {
                (lo, lo_name)
            };
            let w2 = 1.0 - w1;
            Ok(PortfolioSolution {
                weights: vec![w1, w2],
                objective: w1 * sums[0] + w2 * sums[1],
                binding: vec![binding, "budget".to_string()],
                mode,
            })
        }
    }
}

/// Evaluation-period outcome: per-step weighted returns and their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub cumulative: f64,
    pub series: Vec<f64>,
}

/// Applies fixed weights to an evaluation return matrix (n x M).
pub fn evaluate_portfolio(
    solution: &PortfolioSolution,
    eval_returns: &DMatrix<f64>,
) -> Result<EvalOutcome> {
    if eval_returns.ncols() != solution.weights.len() {
        return Err(Error::argument(format!(
            "evaluation matrix has {} columns for {} weights",
            eval_returns.ncols(),
            solution.weights.len()
        )));
    }
    let series: Vec<f64> = (0..eval_returns.nrows())
        .map(|t| {
            solution
                .weights
                .iter()
                .enumerate()
                .map(|(c, w)| w * eval_returns[(t, c)])
                .sum()
        })
        .collect();
    Ok(EvalOutcome {
        cumulative: series.iter().sum(),
        series,
    })
}
