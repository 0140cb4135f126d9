//! Stripe suppression by nulling DFT coefficients.
//!
//! Frequencies use centered indices: `k` runs along image columns
//! (horizontal), `u` along rows (vertical), each in `[-floor(N/2), ceil(N/2) - 1]`.
//! A coefficient is zeroed when `|k| <= w` and `|u| > h`.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_dims, YieldImage};
use crate::metrics::image_mse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NullingParams {
    pub w: usize,
    pub h: usize,
}

impl NullingParams {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.w > width / 2 {
            return Err(Error::invalid("w", format!("must be <= {}", width / 2)));
        }
        if self.h > height / 2 {
            return Err(Error::invalid("h", format!("must be <= {}", height / 2)));
        }
        Ok(())
    }
}

/// Default tuning bounds `(5, floor(H / 8))`, capped at the largest index.
pub fn default_bounds(width: usize, height: usize) -> (usize, usize) {
    (5.min(width / 2), (height / 8).min(height / 2))
}

#[inline]
fn centered(i: usize, n: usize) -> i64 {
    if i < n.div_ceil(2) {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

struct Spectrum {
    width: usize,
    height: usize,
    data: Vec<Complex64>,
}

fn transform(width: usize, height: usize, data: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (
            planner.plan_fft_inverse(width),
            planner.plan_fft_inverse(height),
        )
    } else {
        (
            planner.plan_fft_forward(width),
            planner.plan_fft_forward(height),
        )
    };
    row_fft.process(data);
    let mut col = vec![Complex64::default(); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = data[y * width + x];
        }
        col_fft.process(&mut col);
        for y in 0..height {
            data[y * width + x] = col[y];
        }
    }
}

fn forward(image: &YieldImage) -> Spectrum {
    let mut data: Vec<Complex64> = image
        .values
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    transform(image.width, image.height, &mut data, false);
    Spectrum {
        width: image.width,
        height: image.height,
        data,
    }
}

/// Masked inverse; also returns the largest discarded imaginary part.
fn masked_inverse(spec: &Spectrum, params: NullingParams) -> (YieldImage, f64) {
    let (w, h) = (spec.width, spec.height);
    let mut data = spec.data.clone();
    for y in 0..h {
        if centered(y, h).unsigned_abs() as usize <= params.h {
            continue;
        }
        for x in 0..w {
            if centered(x, w).unsigned_abs() as usize <= params.w {
                data[y * w + x] = Complex64::default();
            }
        }
    }
    transform(w, h, &mut data, true);
    let scale = 1.0 / (w * h) as f64;
    let mut max_imag: f64 = 0.0;
    let values = data
        .iter()
        .map(|c| {
            max_imag = max_imag.max((c.im * scale).abs());
            c.re * scale
        })
        .collect();
    (YieldImage::from_estimate(w, h, values), max_imag)
}

pub fn ft_nulling(image: &YieldImage, params: NullingParams) -> Result<YieldImage> {
    params.validate(image.width, image.height)?;
    Ok(masked_inverse(&forward(image), params).0)
}

/// Exhaustive search over `w <= w_max`, `h <= h_max` for the smallest MSE
/// against `truth`. Ties go to the lexicographically smaller `(w, h)`.
pub fn tune_nulling(
    noisy: &YieldImage,
    truth: &YieldImage,
    w_max: usize,
    h_max: usize,
) -> Result<(NullingParams, f64)> {
    check_dims("noisy", noisy.dims(), "truth", truth.dims())?;
    let w_max = w_max.min(noisy.width / 2);
    let h_max = h_max.min(noisy.height / 2);
    let spec = forward(noisy);
    let candidates: Vec<NullingParams> = (0..=w_max)
        .flat_map(|w| (0..=h_max).map(move |h| NullingParams { w, h }))
        .collect();
    let scored: Vec<(NullingParams, f64)> = candidates
        .par_iter()
        .map(|&p| {
            let (img, _) = masked_inverse(&spec, p);
            image_mse(&img, truth).map(|m| (p, m))
        })
        .collect::<Result<_>>()?;
    Ok(scored
        .into_iter()
        .min_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(a.0.w.cmp(&b.0.w))
                .then(a.0.h.cmp(&b.0.h))
        })
        .expect("at least one candidate"))
}
