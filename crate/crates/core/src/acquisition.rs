//! Time-resolved and conventional secondary-electron acquisition.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::beam_model::DoseField;
use crate::distributions::{sample_neyman, NeymanParams};
use crate::error::{Error, Result};
use crate::grid::{check_dims, YieldImage};
use crate::rng::{stream, Domain};

/// `n` sub-acquisition counts per pixel, stored pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TRMeasurement {
    pub width: usize,
    pub height: usize,
    pub n: usize,
    counts: Vec<u32>,
}

impl TRMeasurement {
    pub fn from_counts(width: usize, height: usize, n: usize, counts: Vec<u32>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "must be >= 1"));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("width/height", "must be >= 1"));
        }
        if counts.len() != width * height * n {
            return Err(Error::invalid(
                "counts",
                format!(
                    "expected {} counts for {width}x{height} pixels with n={n}, got {}",
                    width * height * n,
                    counts.len()
                ),
            ));
        }
        Ok(Self {
            width,
            height,
            n,
            counts,
        })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Counts `Y_1..Y_n` at raster index `p`.
    pub fn pixel(&self, p: usize) -> &[u32] {
        &self.counts[p * self.n..(p + 1) * self.n]
    }

    pub fn iter_pixels(&self) -> std::slice::Chunks<'_, u32> {
        self.counts.chunks(self.n)
    }

    pub fn par_iter_pixels(&self) -> rayon::slice::Chunks<'_, u32> {
        self.counts.par_chunks(self.n)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }
}

/// Per-pixel totals `Y = sum_k Y_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedMeasurement {
    pub width: usize,
    pub height: usize,
    pub totals: Vec<u64>,
}

impl AggregatedMeasurement {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Samples `n` sub-acquisitions per pixel with dose `lambda_p / n` each.
///
/// Pixel `p` draws from its own stream `(seed, p)`, so the output does not
/// depend on how the work is scheduled.
pub fn acquire_time_resolved(
    truth: &YieldImage,
    dose: &DoseField,
    n: usize,
    seed: u64,
) -> Result<TRMeasurement> {
    check_dims("truth", truth.dims(), "dose", dose.dims())?;
    if n == 0 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    let mut counts = vec![0u32; truth.len() * n];
    counts
        .par_chunks_mut(n)
        .enumerate()
        .try_for_each(|(p, slot)| -> Result<()> {
            let params = NeymanParams::new(truth.values[p], dose.values[p] / n as f64)?;
            let mut rng = stream(seed, Domain::Acquisition, p as u64);
            for c in slot.iter_mut() {
                let y = sample_neyman(params, &mut rng);
                *c = u32::try_from(y)
                    .map_err(|_| Error::Domain(format!("count {y} at pixel {p} overflows u32")))?;
            }
            Ok(())
        })?;
    TRMeasurement::from_counts(truth.width, truth.height, n, counts)
}

pub fn aggregate(tr: &TRMeasurement) -> AggregatedMeasurement {
    AggregatedMeasurement {
        width: tr.width,
        height: tr.height,
        totals: tr
            .iter_pixels()
            .map(|px| px.iter().map(|&c| c as u64).sum())
            .collect(),
    }
}

/// Multiplicity of each count value at one pixel.
pub fn count_histogram(tr: &TRMeasurement, pixel: usize) -> Result<BTreeMap<u32, usize>> {
    if pixel >= tr.pixels() {
        return Err(Error::invalid(
            "pixel",
            format!("index {pixel} out of range for {} pixels", tr.pixels()),
        ));
    }
    Ok(histogram(tr.pixel(pixel)))
}

pub(crate) fn histogram(counts: &[u32]) -> BTreeMap<u32, usize> {
    let mut out = BTreeMap::new();
    for &c in counts {
        *out.entry(c).or_insert(0) += 1;
    }
    out
}
