//! Per-pixel yield estimators and the reference dose estimator.

mod likelihood;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{AggregatedMeasurement, TRMeasurement};
use crate::beam_model::DoseField;
use crate::distributions::{lambert_w0, StirlingTable};
use crate::error::{Error, Result};
use crate::grid::{check_dims, DoseMap, YieldImage};

use likelihood::{GridKernel, PixelSummary, SharedDoseKernel};

/// Uniform search grid `min, min + step, ..., max` for the TRML argmax.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl EtaGrid {
    pub const DEFAULT_STEP: f64 = 0.01;
    /// Grid cap floor for helium-ion-scale yields.
    pub const HIM_FLOOR: f64 = 10.0;
    /// Grid cap floor for SEM-scale yields.
    pub const SEM_FLOOR: f64 = 2.0;

    pub fn new(min: f64, max: f64, step: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && step.is_finite()) {
            return Err(Error::invalid("grid", "bounds and step must be finite"));
        }
        if min < 0.0 {
            return Err(Error::invalid("grid.min", "must be >= 0"));
        }
        if step <= 0.0 {
            return Err(Error::invalid("grid.step", "must be > 0"));
        }
        if max <= min {
            return Err(Error::invalid("grid.max", "must exceed grid.min"));
        }
        Ok(Self { min, max, step })
    }

    /// Grid from 0 to `max(floor, 4 * p99(QM))` at the default step.
    pub fn from_qm(qm: &[f64], floor: f64) -> Result<Self> {
        let mut sorted: Vec<f64> = qm.iter().copied().filter(|v| v.is_finite()).collect();
        sorted.sort_by(f64::total_cmp);
        let p99 = if sorted.is_empty() {
            0.0
        } else {
            // nearest-rank percentile
            let rank = ((0.99 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
            sorted[rank - 1]
        };
        let cap = floor.max(4.0 * p99);
        let cap = (cap / Self::DEFAULT_STEP).ceil() * Self::DEFAULT_STEP;
        Self::new(0.0, cap, Self::DEFAULT_STEP)
    }

    pub fn len(&self) -> usize {
        ((self.max - self.min) / self.step).round() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.min + i as f64 * self.step)
            .collect()
    }
}

/// Dose assumed by a dose-aware estimator: one value or one per pixel.
#[derive(Debug, Clone, Copy)]
pub enum AssumedDose<'a> {
    Scalar(f64),
    PerPixel(&'a [f64]),
}

impl AssumedDose<'_> {
    fn validate(&self, pixels: usize) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        match *self {
            AssumedDose::Scalar(v) if !ok(v) => Err(Error::invalid(
                "lambda_assumed",
                format!("dose must be finite and > 0, got {v}"),
            )),
            AssumedDose::PerPixel(vs) if vs.len() != pixels => Err(Error::invalid(
                "lambda_assumed",
                format!("expected {pixels} per-pixel doses, got {}", vs.len()),
            )),
            AssumedDose::PerPixel(vs) => match vs.iter().find(|v| !ok(**v)) {
                Some(v) => Err(Error::invalid(
                    "lambda_assumed",
                    format!("dose must be finite and > 0, got {v}"),
                )),
                None => Ok(()),
            },
            AssumedDose::Scalar(_) => Ok(()),
        }
    }

    #[inline]
    fn at(&self, p: usize) -> f64 {
        match *self {
            AssumedDose::Scalar(v) => v,
            AssumedDose::PerPixel(vs) => vs[p],
        }
    }
}

/// Conventional estimate `Y / lambda`.
pub fn baseline_eta(agg: &AggregatedMeasurement, dose: AssumedDose<'_>) -> Result<YieldImage> {
    dose.validate(agg.totals.len())?;
    let values = agg
        .totals
        .iter()
        .enumerate()
        .map(|(p, &y)| y as f64 / dose.at(p))
        .collect();
    Ok(YieldImage::from_estimate(agg.width, agg.height, values))
}

pub(crate) fn qm_pixel(counts: &[u32]) -> f64 {
    let (total, active) = counts.iter().fold((0u64, 0u64), |(t, a), &c| {
        (t + c as u64, a + (c > 0) as u64)
    });
    if active == 0 {
        0.0
    } else {
        total as f64 / active as f64
    }
}

/// Quotient-mode estimate: total count over the number of non-empty
/// sub-acquisitions. All-zero pixels estimate 0.
pub fn qm_eta(tr: &TRMeasurement) -> YieldImage {
    let values = tr.iter_pixels().map(qm_pixel).collect();
    YieldImage::from_estimate(tr.width, tr.height, values)
}

pub(crate) fn lqm_from_qm(q: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    // -q e^-q is never below -1/e, so W0 is defined
    let w = lambert_w0(-q * (-q).exp()).expect("argument within [-1/e, 0]");
    (w + q).max(0.0)
}

/// Lambert quotient-mode estimate `W0(-q e^-q) + q` with `q` the QM value.
pub fn lqm_eta(tr: &TRMeasurement) -> YieldImage {
    let values = tr
        .iter_pixels()
        .map(|px| lqm_from_qm(qm_pixel(px)))
        .collect();
    YieldImage::from_estimate(tr.width, tr.height, values)
}

/// Time-resolved maximum likelihood by exhaustive grid search.
pub fn trml_eta(tr: &TRMeasurement, dose: AssumedDose<'_>, grid: &EtaGrid) -> Result<YieldImage> {
    dose.validate(tr.pixels())?;
    let table = StirlingTable::new(StirlingTable::MAX_COUNT);
    let kernel = GridKernel::new(grid, &table);
    let n = tr.n as f64;
    let summaries: Vec<PixelSummary> = tr
        .par_iter_pixels()
        .map(|px| PixelSummary::from_counts(px, table.max_count()))
        .collect();

    let idx: Vec<usize> = match dose {
        AssumedDose::Scalar(lambda) => {
            let max_count = tr
                .counts()
                .iter()
                .map(|&c| c as usize)
                .filter(|&c| c <= table.max_count())
                .max()
                .unwrap_or(0);
            let shared = SharedDoseKernel::new(&kernel, lambda / n, max_count);
            summaries.par_iter().map(|s| shared.argmax(s)).collect()
        }
        AssumedDose::PerPixel(doses) => summaries
            .par_iter()
            .zip(doses.par_iter())
            .map(|(s, &lambda)| kernel.argmax(s, lambda / n))
            .collect(),
    };
    let values = idx.into_iter().map(|g| kernel.etas[g]).collect();
    Ok(YieldImage::from_estimate(tr.width, tr.height, values))
}

/// TRML given the true per-pixel dose.
pub fn oracle_eta(tr: &TRMeasurement, dose_true: &DoseField, grid: &EtaGrid) -> Result<YieldImage> {
    check_dims("measurement", tr.dims(), "dose", dose_true.dims())?;
    trml_eta(tr, AssumedDose::PerPixel(&dose_true.values), grid)
}

/// Reference dose estimate `Y / eta` using the true yield. Pixels with zero
/// yield are undefined (`NaN`).
pub fn lambda_reference(agg: &AggregatedMeasurement, truth: &YieldImage) -> Result<DoseMap> {
    check_dims("measurement", agg.dims(), "truth", truth.dims())?;
    let values = agg
        .totals
        .iter()
        .zip(&truth.values)
        .map(|(&y, &eta)| if eta > 0.0 { y as f64 / eta } else { f64::NAN })
        .collect();
    Ok(DoseMap {
        width: agg.width,
        height: agg.height,
        values,
    })
}
