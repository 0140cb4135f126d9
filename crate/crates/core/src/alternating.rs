//! Alternating yield/dose estimation.
//!
//! Each iteration fits the yield by TRML under the current dose estimate,
//! picks the filter noise variances from image averages, then re-estimates
//! the dose with the forward/backward sequential filter.

use std::fmt::Write as _;

use serde::Serialize;

use crate::acquisition::{aggregate, TRMeasurement};
use crate::beam_model::ARParams;
use crate::error::{ensure_finite, Error, Result};
use crate::estimators::{trml_eta, AssumedDose, EtaGrid};
use crate::grid::{check_dims, YieldImage};
use crate::metrics::{dose_mse, image_mse};
use crate::sequential_filter::{
    run_bidirectional, select_sigma_eps, select_sigma_gamma, FilterNoiseParams, MseTable,
};

#[derive(Debug, Clone, Copy)]
pub struct AlternatingConfig<'a> {
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub lambda_init: f64,
    pub grid: EtaGrid,
    pub mse_table: &'a MseTable,
}

impl<'a> AlternatingConfig<'a> {
    pub const DEFAULT_MAX_ITERATIONS: usize = 10;
    pub const DEFAULT_TOL: f64 = 1e-4;

    pub fn new(lambda_init: f64, grid: EtaGrid, mse_table: &'a MseTable) -> Self {
        Self {
            max_iterations: Self::DEFAULT_MAX_ITERATIONS,
            convergence_tol: Self::DEFAULT_TOL,
            lambda_init,
            grid,
            mse_table,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations", "must be >= 1"));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::invalid("convergence_tol", "must be > 0"));
        }
        ensure_finite("lambda_init", self.lambda_init)?;
        if self.lambda_init <= 0.0 {
            return Err(Error::invalid("lambda_init", "must be > 0"));
        }
        Ok(())
    }
}

/// Ground truth used only to score iterations.
#[derive(Debug, Clone, Copy)]
pub struct DiagnosticTruth<'a> {
    pub eta: &'a YieldImage,
    pub dose: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub mse_eta: Option<f64>,
    pub mse_lambda: Option<f64>,
    /// `None` on the first iteration.
    pub rel_change: Option<f64>,
    pub sigma_eps_sq: f64,
    pub sigma_gamma_sq: f64,
}

#[derive(Debug, Clone)]
pub struct AlternatingResult {
    pub eta_final: YieldImage,
    pub lambda_final: Vec<f64>,
    pub diagnostics: Vec<IterationDiagnostics>,
    /// `false` when the iteration cap was reached first.
    pub converged: bool,
}

impl AlternatingResult {
    pub fn iterations(&self) -> usize {
        self.diagnostics.len()
    }

    pub fn diagnostics_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        let mut out =
            String::from("iteration,mse_eta,mse_lambda,rel_change,sigma_eps_sq,sigma_gamma_sq\n");
        for d in &self.diagnostics {
            let _ = writeln!(
                out,
                "{},{},{},{},{:?},{:?}",
                d.iteration,
                f(d.mse_eta),
                f(d.mse_lambda),
                f(d.rel_change),
                d.sigma_eps_sq,
                d.sigma_gamma_sq
            );
        }
        out
    }
}

/// `||next - prev|| / max(||prev||, tiny)` in the Euclidean norm.
pub fn convergence_metric(eta_prev: &YieldImage, eta_next: &YieldImage) -> Result<f64> {
    check_dims("eta_prev", eta_prev.dims(), "eta_next", eta_next.dims())?;
    let diff: f64 = eta_prev
        .values
        .iter()
        .zip(&eta_next.values)
        .map(|(a, b)| (b - a).powi(2))
        .sum();
    let norm: f64 = eta_prev.values.iter().map(|a| a * a).sum();
    Ok(diff.sqrt() / norm.sqrt().max(f64::MIN_POSITIVE))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn run_alternating(
    tr: &TRMeasurement,
    ar: &ARParams,
    cfg: &AlternatingConfig<'_>,
    truth: Option<DiagnosticTruth<'_>>,
) -> Result<AlternatingResult> {
    cfg.validate()?;
    if let Some(t) = truth {
        check_dims("measurement", tr.dims(), "truth", t.eta.dims())?;
        if t.dose.len() != tr.pixels() {
            return Err(Error::invalid(
                "truth.dose",
                "length differs from pixel count",
            ));
        }
    }
    let agg = aggregate(tr);
    let mut lambda_hat: Option<Vec<f64>> = None;
    let mut eta_prev: Option<YieldImage> = None;
    let mut diagnostics = Vec::with_capacity(cfg.max_iterations);
    let mut converged = false;

    for iteration in 1..=cfg.max_iterations {
        let dose = match &lambda_hat {
            None => AssumedDose::Scalar(cfg.lambda_init),
            // a flat trace takes the shared-dose path; both paths agree exactly
            Some(l) if l.iter().all(|&v| v == l[0]) => AssumedDose::Scalar(l[0]),
            Some(l) => AssumedDose::PerPixel(l),
        };
        let eta_hat = trml_eta(tr, dose, &cfg.grid)?;
        let eta_bar = eta_hat.mean();
        let lambda_bar = lambda_hat.as_deref().map_or(cfg.lambda_init, mean);

        let sigma_gamma_sq = select_sigma_gamma(ar.lambda_nominal, eta_bar, cfg.mse_table)?;
        let sigma_eps_sq = select_sigma_eps(ar, eta_bar, lambda_bar, sigma_gamma_sq)?;
        let noise = FilterNoiseParams::new(sigma_eps_sq, sigma_gamma_sq)?;
        let next = run_bidirectional(&agg, &eta_hat, ar, &noise, cfg.lambda_init)?;

        let rel_change = eta_prev
            .as_ref()
            .map(|p| convergence_metric(p, &eta_hat))
            .transpose()?;
        let (mse_eta, mse_lambda) = match truth {
            Some(t) => (
                Some(image_mse(&eta_hat, t.eta)?),
                Some(dose_mse(&next, t.dose)?.0),
            ),
            None => (None, None),
        };
        diagnostics.push(IterationDiagnostics {
            iteration,
            mse_eta,
            mse_lambda,
            rel_change,
            sigma_eps_sq,
            sigma_gamma_sq,
        });
        lambda_hat = Some(next);
        eta_prev = Some(eta_hat);
        if rel_change.is_some_and(|r| r < cfg.convergence_tol) {
            converged = true;
            break;
        }
    }

    Ok(AlternatingResult {
        eta_final: eta_prev.expect("at least one iteration"),
        lambda_final: lambda_hat.expect("at least one iteration"),
        diagnostics,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::acquire_time_resolved;
    use crate::beam_model::generate_dose_field;
    use crate::rng::{stream, Domain};
    use crate::sequential_filter::MseRow;

    fn table() -> MseTable {
        let rows = [1.0, 3.0, 5.0]
            .iter()
            .map(|&eta| MseRow {
                lambda: 20.0,
                eta,
                mse: 0.05 * eta,
                std_err: 0.001,
            })
            .collect();
        MseTable::new(rows, 200, 1000, 0).unwrap()
    }

    #[test]
    fn metric_values() {
        let a = YieldImage::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let b = YieldImage::new(3, 1, vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(convergence_metric(&a, &a).unwrap(), 0.0);
        assert!((convergence_metric(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let c = YieldImage::new(3, 1, vec![1.5, 1.0, 3.5]).unwrap();
        let direct = ((0.25f64 + 1.0 + 0.25) / 14.0).sqrt();
        assert!((convergence_metric(&a, &c).unwrap() - direct).abs() < 1e-15);
        let z = YieldImage::new(3, 1, vec![0.0; 3]).unwrap();
        assert!(convergence_metric(&z, &a).unwrap().is_finite());
    }

    fn scene(
        cv: f64,
        seed: u64,
    ) -> (
        YieldImage,
        crate::beam_model::DoseField,
        TRMeasurement,
        ARParams,
    ) {
        let (w, h) = (24, 16);
        let ar = ARParams::from_spec(20.0, cv, 0.999).unwrap();
        let truth = YieldImage::new(
            w,
            h,
            (0..w * h)
                .map(|i| 1.0 + 4.0 * ((i % w) as f64 / w as f64))
                .collect(),
        )
        .unwrap();
        let dose = generate_dose_field(&ar, w, h, &mut stream(seed, Domain::Dose, 0)).unwrap();
        let tr = acquire_time_resolved(&truth, &dose, 200, seed).unwrap();
        (truth, dose, tr, ar)
    }

    #[test]
    fn constant_dose_collapses_to_trml() {
        let (truth, dose, tr, ar) = scene(0.0, 4);
        let t = table();
        let grid = EtaGrid::new(0.0, 12.0, 0.01).unwrap();
        let cfg = AlternatingConfig::new(20.0, grid, &t);
        let res = run_alternating(
            &tr,
            &ar,
            &cfg,
            Some(DiagnosticTruth {
                eta: &truth,
                dose: &dose.values,
            }),
        )
        .unwrap();
        assert_eq!(
            res.eta_final,
            trml_eta(&tr, AssumedDose::Scalar(20.0), &grid).unwrap()
        );
        assert!(res.lambda_final.iter().all(|&v| v == 20.0));
        assert!(res.converged);
        assert_eq!(res.iterations(), 2);
        assert!(res.diagnostics.iter().all(|d| d.sigma_eps_sq == 0.0));
    }

    #[test]
    fn first_iteration_is_plain_trml_and_truth_is_optional() {
        let (truth, dose, tr, ar) = scene(0.2, 5);
        let t = table();
        let grid = EtaGrid::new(0.0, 12.0, 0.01).unwrap();
        let cfg = AlternatingConfig {
            max_iterations: 1,
            ..AlternatingConfig::new(20.0, grid, &t)
        };
        let with = run_alternating(
            &tr,
            &ar,
            &cfg,
            Some(DiagnosticTruth {
                eta: &truth,
                dose: &dose.values,
            }),
        )
        .unwrap();
        let without = run_alternating(&tr, &ar, &cfg, None).unwrap();
        assert_eq!(
            with.eta_final,
            trml_eta(&tr, AssumedDose::Scalar(20.0), &grid).unwrap()
        );
        assert_eq!(with.eta_final, without.eta_final);
        assert_eq!(with.lambda_final, without.lambda_final);
        assert!(!with.converged);
        assert!(without.diagnostics[0].mse_eta.is_none());
        let csv = with.diagnostics_csv();
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn rejects_bad_config() {
        let (_, _, tr, ar) = scene(0.2, 6);
        let t = table();
        let grid = EtaGrid::new(0.0, 12.0, 0.01).unwrap();
        let mut cfg = AlternatingConfig::new(20.0, grid, &t);
        cfg.max_iterations = 0;
        assert!(run_alternating(&tr, &ar, &cfg, None).is_err());
        let cfg = AlternatingConfig::new(-1.0, grid, &t);
        assert!(run_alternating(&tr, &ar, &cfg, None).is_err());
    }
}
