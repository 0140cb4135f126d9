//! Raster grids shared by every stage.

use crate::error::{Error, Result};

/// Per-pixel secondary-electron yield, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl YieldImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("width/height", "image must be non-empty"));
        }
        if values.len() != width * height {
            return Err(Error::invalid(
                "values",
                format!("expected {} values, got {}", width * height, values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(
                "values",
                format!("yield must be finite and >= 0, got {v}"),
            ));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Estimates are not range-checked (e.g. FT output may dip below zero).
    pub(crate) fn from_estimate(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Per-pixel dose estimate, row-major. `NaN` marks pixels where the
/// estimator is undefined; they are excluded from error averages.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DoseMap {
    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Mean over defined pixels.
    pub fn mean(&self) -> f64 {
        let (sum, count) = self
            .values
            .iter()
            .filter(|v| !v.is_nan())
            .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        sum / count as f64
    }
}

pub(crate) fn check_dims(
    left: &'static str,
    l: (usize, usize),
    right: &'static str,
    r: (usize, usize),
) -> Result<()> {
    if l == r {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            left,
            lw: l.0,
            lh: l.1,
            right,
            rw: r.0,
            rh: r.1,
        })
    }
}
