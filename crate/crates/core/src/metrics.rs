//! Error metrics, closed-form baseline error and excess-MSE accounting.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{ensure_finite, Error, Result};
use crate::grid::{check_dims, DoseMap, YieldImage};

pub fn image_mse(estimate: &YieldImage, truth: &YieldImage) -> Result<f64> {
    check_dims("estimate", estimate.dims(), "truth", truth.dims())?;
    let sum: f64 = estimate
        .values
        .iter()
        .zip(&truth.values)
        .map(|(e, t)| (e - t).powi(2))
        .sum();
    Ok(sum / truth.len() as f64)
}

/// MSE over pixels where the estimate is defined, with the number skipped.
pub fn dose_mse(estimate: &[f64], truth: &[f64]) -> Result<(f64, usize)> {
    if estimate.len() != truth.len() {
        return Err(Error::invalid(
            "dose_mse",
            format!("length {} vs {}", estimate.len(), truth.len()),
        ));
    }
    let (sum, used) = estimate
        .iter()
        .zip(truth)
        .filter(|(e, _)| !e.is_nan())
        .fold((0.0, 0usize), |(s, k), (e, t)| (s + (e - t).powi(2), k + 1));
    let skipped = truth.len() - used;
    if used == 0 {
        return Ok((f64::NAN, skipped));
    }
    Ok((sum / used as f64, skipped))
}

pub fn dose_map_mse(estimate: &DoseMap, truth: &[f64]) -> Result<(f64, usize)> {
    dose_mse(&estimate.values, truth)
}

/// Baseline MSE when the assumed dose is `lambda (1 + epsilon)`.
pub fn analytic_baseline_mse(eta: f64, lambda: f64, epsilon: f64) -> Result<f64> {
    ensure_finite("eta", eta)?;
    ensure_finite("lambda", lambda)?;
    ensure_finite("epsilon", epsilon)?;
    let s = 1.0 + epsilon;
    if s == 0.0 {
        return Err(Error::invalid(
            "epsilon",
            "epsilon = -1 makes the assumed dose zero",
        ));
    }
    if lambda <= 0.0 {
        return Err(Error::invalid("lambda", "must be > 0"));
    }
    let bias = eta * epsilon / s;
    Ok(bias * bias + eta * (1.0 + eta) / (lambda * s * s))
}

pub fn excess_mse(est_mse: f64, oracle_mse: f64) -> f64 {
    est_mse - oracle_mse
}

/// `100 * est_excess / baseline_excess`, floored at 0.
pub fn excess_percent(est_excess: f64, baseline_excess: f64) -> Result<f64> {
    if !(baseline_excess > 0.0) {
        return Err(Error::invalid(
            "baseline_excess",
            format!("must be > 0 for a percentage, got {baseline_excess}"),
        ));
    }
    Ok((100.0 * est_excess / baseline_excess).max(0.0))
}

/// Bias, sample variance and direct mean-square error of repeated estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasVariance {
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
}

pub fn pointwise_bias_variance(trials: &[f64], truth: f64) -> Result<BiasVariance> {
    if trials.len() < 2 {
        return Err(Error::invalid("trials", "need at least 2 trials"));
    }
    let t = trials.len() as f64;
    let mean = trials.iter().sum::<f64>() / t;
    let variance = trials.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0);
    let mse = trials.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / t;
    Ok(BiasVariance {
        bias: mean - truth,
        variance,
        mse,
    })
}

/// One estimator's line in a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub estimator: String,
    pub mse_eta: Option<f64>,
    pub excess: Option<f64>,
    pub excess_percent: Option<f64>,
    pub mse_lambda: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EstimatorReport {
    pub rows: Vec<ReportRow>,
}

impl EstimatorReport {
    /// Builds rows from `(name, image MSE, dose MSE)` triples.
    ///
    /// Excess columns are filled when an `oracle` row is present, percentages
    /// when a `baseline` row is present with positive excess.
    pub fn from_entries(entries: &[(String, Option<f64>, Option<f64>)]) -> Self {
        let find = |name: &str| {
            entries
                .iter()
                .find(|(n, m, _)| n == name && m.is_some())
                .and_then(|e| e.1)
        };
        let oracle = find("oracle");
        let base_excess = oracle.zip(find("baseline")).map(|(o, b)| excess_mse(b, o));
        let rows = entries
            .iter()
            .map(|(name, mse_eta, mse_lambda)| {
                let excess = mse_eta.zip(oracle).map(|(m, o)| excess_mse(m, o));
                let pct = excess
                    .zip(base_excess)
                    .and_then(|(e, b)| excess_percent(e, b).ok());
                ReportRow {
                    estimator: name.clone(),
                    mse_eta: *mse_eta,
                    excess,
                    excess_percent: pct,
                    mse_lambda: *mse_lambda,
                }
            })
            .collect();
        Self { rows }
    }

    pub fn row(&self, estimator: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.estimator == estimator)
    }

    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        let mut out = String::from("estimator,mse_eta,excess_mse,excess_percent,mse_lambda\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.estimator,
                f(r.mse_eta),
                f(r.excess),
                f(r.excess_percent),
                f(r.mse_lambda)
            );
        }
        out
    }

    /// Fixed-width table, one estimator per line.
    pub fn to_table(&self) -> String {
        let f = |v: Option<f64>, prec: usize| match v {
            Some(x) => format!("{x:.prec$}"),
            None => "-".to_string(),
        };
        let mut out = format!(
            "{:<14} {:>12} {:>12} {:>9} {:>12}\n",
            "estimator", "MSE(eta)", "excess", "excess%", "MSE(lambda)"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<14} {:>12} {:>12} {:>9} {:>12}",
                r.estimator,
                f(r.mse_eta, 4),
                f(r.excess, 4),
                f(r.excess_percent, 1),
                f(r.mse_lambda, 4)
            );
        }
        out
    }
}
