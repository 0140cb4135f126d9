//! Neyman Type A counting statistics and the principal Lambert W branch.
//!
//! A pixel hit by `M ~ Poisson(lambda)` primaries, each of which releases
//! `Poisson(eta)` secondaries, produces a total count with PMF
//!
//! ```text
//! P(y) = e^-lambda * eta^y / y! * sum_m (lambda e^-eta)^m m^y / m!
//! ```
//!
//! The m-sum is evaluated in log space. [`StirlingTable`] gives the same
//! value as a finite polynomial and is what the likelihood grid searches use.

use rand::Rng;
use statrs::function::factorial::ln_factorial;

use crate::error::{ensure_finite, Error, Result};

/// Yield and dose of a single Neyman Type A draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeymanParams {
    pub eta: f64,
    pub lambda: f64,
}

impl NeymanParams {
    pub fn new(eta: f64, lambda: f64) -> Result<Self> {
        ensure_finite("eta", eta)?;
        ensure_finite("lambda", lambda)?;
        if eta < 0.0 {
            return Err(Error::invalid("eta", format!("must be >= 0, got {eta}")));
        }
        if lambda < 0.0 {
            return Err(Error::invalid(
                "lambda",
                format!("must be >= 0, got {lambda}"),
            ));
        }
        Ok(Self { eta, lambda })
    }
}

/// Relative cut-off for dropping tail terms of the m-sum.
const TAIL_RATIO_LN: f64 = -39.143_946_580_164_66; // ln(1e-17)

/// Log-probability of observing `y` secondaries.
///
/// Returns `f64::NEG_INFINITY` for impossible counts (for example `y > 0`
/// with zero yield or zero dose).
pub fn neyman_log_pmf(y: u64, params: NeymanParams) -> f64 {
    let NeymanParams { eta, lambda } = params;
    if y == 0 {
        // m-sum collapses to exp(lambda e^-eta)
        return -lambda * -(-eta).exp_m1();
    }
    if eta == 0.0 || lambda == 0.0 {
        return f64::NEG_INFINITY;
    }
    let yf = y as f64;
    let ln_z = lambda.ln() - eta;
    let floor = 50.0_f64.max(lambda + 12.0 * lambda.sqrt() + yf).ceil() as u64;

    // online log-sum-exp over m >= 1 (the m = 0 term vanishes for y > 0)
    let mut max = f64::NEG_INFINITY;
    let mut acc = 0.0;
    let mut ln_m_fact = 0.0;
    let mut m: u64 = 1;
    loop {
        let mf = m as f64;
        ln_m_fact += mf.ln();
        let term = mf * ln_z + yf * mf.ln() - ln_m_fact;
        if term > max {
            acc = acc * (max - term).exp() + 1.0;
            max = term;
        } else {
            acc += (term - max).exp();
        }
        if m >= floor && term < max + TAIL_RATIO_LN {
            break;
        }
        m += 1;
    }
    -lambda + yf * eta.ln() - ln_factorial(y) + max + acc.ln()
}

/// Mean and variance of the total count.
pub fn neyman_moments(params: NeymanParams) -> (f64, f64) {
    let mean = params.lambda * params.eta;
    (mean, mean + params.lambda * params.eta * params.eta)
}

/// Two-stage compound draw: `M ~ Poisson(lambda)`, then `Y | M ~ Poisson(M eta)`.
pub fn sample_neyman<R: Rng + ?Sized>(params: NeymanParams, rng: &mut R) -> u64 {
    if params.eta == 0.0 || params.lambda == 0.0 {
        return 0;
    }
    let primaries = sample_poisson(params.lambda, rng);
    if primaries == 0 {
        return 0;
    }
    sample_poisson(primaries as f64 * params.eta, rng)
}

/// Means below this use sequential-search inversion, above it PTRS.
const INVERSION_LIMIT: f64 = 30.0;

/// Poisson draw. `mean` must be finite and non-negative.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    debug_assert!(mean.is_finite() && mean >= 0.0);
    if mean <= 0.0 {
        0
    } else if mean < INVERSION_LIMIT {
        poisson_inversion(mean, rng)
    } else {
        poisson_ptrs(mean, rng)
    }
}

fn poisson_inversion<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
        // cdf can stall just below 1 in floating point
        if p <= cdf * f64::EPSILON && k as f64 > mean {
            break;
        }
    }
    k
}

/// Hörmann's transformed rejection with squeeze.
fn poisson_ptrs<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    let ln_mean = mean.ln();
    let smu = mean.sqrt();
    let b = 0.931 + 2.53 * smu;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -mean + k * ln_mean - ln_factorial(k as u64);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// Exact PMF evaluation through Stirling numbers of the second kind.
///
/// With `z = lambda e^-eta` the m-sum equals `e^z * sum_k S(y, k) z^k`, so
/// for `y >= 1`
///
/// ```text
/// ln P(y) = -lambda + z + y ln eta - ln y! + ln z + ln Q_y(z),
/// Q_y(z)  = sum_{k=1..y} S(y, k) z^(k-1).
/// ```
///
/// Coefficients are all positive, so Horner evaluation is cancellation free.
/// Counts above [`StirlingTable::MAX_COUNT`] overflow `f64` coefficients and
/// must use [`neyman_log_pmf`].
#[derive(Debug, Clone)]
pub struct StirlingTable {
    max_count: usize,
    // row y holds S(y, 1..=y)
    offsets: Vec<usize>,
    coeffs: Vec<f64>,
}

impl StirlingTable {
    pub const MAX_COUNT: usize = 160;

    pub fn new(max_count: usize) -> Self {
        let max_count = max_count.min(Self::MAX_COUNT);
        let mut offsets = Vec::with_capacity(max_count + 2);
        let mut coeffs = Vec::new();
        offsets.push(0); // y = 0 has no k >= 1 terms
        offsets.push(0);
        let mut prev: Vec<f64> = Vec::new();
        for y in 1..=max_count {
            let mut row = vec![0.0; y];
            for k in 1..=y {
                let same = if k <= prev.len() {
                    k as f64 * prev[k - 1]
                } else {
                    0.0
                };
                let lower = if k >= 2 {
                    prev[k - 2]
                } else if y == 1 {
                    1.0
                } else {
                    0.0
                };
                row[k - 1] = same + lower;
            }
            coeffs.extend_from_slice(&row);
            offsets.push(coeffs.len());
            prev = row;
        }
        Self {
            max_count,
            offsets,
            coeffs,
        }
    }

    pub fn max_count(&self) -> usize {
        self.max_count
    }

    /// `S(y, k)` for `1 <= k <= y <= max_count`.
    pub fn stirling2(&self, y: usize, k: usize) -> f64 {
        assert!(y >= 1 && k >= 1 && k <= y && y <= self.max_count);
        self.coeffs[self.offsets[y] + k - 1]
    }

    /// `ln Q_y(z)` for `1 <= y <= max_count` and `z >= 0`.
    #[inline]
    pub fn ln_reduced_touchard(&self, y: usize, z: f64) -> f64 {
        let row = &self.coeffs[self.offsets[y]..self.offsets[y + 1]];
        let mut acc = 0.0;
        for &c in row.iter().rev() {
            acc = acc * z + c;
        }
        acc.ln()
    }

    /// Same value as [`neyman_log_pmf`], falling back to it for large counts.
    pub fn log_pmf(&self, y: u64, params: NeymanParams) -> f64 {
        let NeymanParams { eta, lambda } = params;
        if y == 0 || y as usize > self.max_count {
            return neyman_log_pmf(y, params);
        }
        if eta == 0.0 || lambda == 0.0 {
            return f64::NEG_INFINITY;
        }
        let z = lambda * (-eta).exp();
        let yf = y as f64;
        -lambda + z + yf * eta.ln() - ln_factorial(y) + lambda.ln() - eta
            + self.ln_reduced_touchard(y as usize, z)
    }
}

const INV_E: f64 = 0.367_879_441_171_442_33;

/// Arguments this far below `-1/e` are treated as rounding of the branch point.
const BRANCH_TOLERANCE: f64 = 1e-14;

/// Principal branch `W0` of the Lambert W function on `[-1/e, inf)`.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::Domain("lambert_w0 of NaN".into()));
    }
    if x < -INV_E - BRANCH_TOLERANCE {
        return Err(Error::Domain(format!(
            "lambert_w0 argument {x} is below the branch point -1/e"
        )));
    }
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let branch_gap = std::f64::consts::E * x + 1.0;
    if branch_gap <= 0.0 {
        return Ok(-1.0);
    }

    let mut w = if branch_gap < 0.3 {
        // series about the branch point
        let p = (2.0 * branch_gap).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x < 3.0 {
        (1.0 + x).ln() * 0.75
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };

    for _ in 0..50 {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1.abs() < 1e-300 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        if !step.is_finite() {
            break;
        }
        w -= step;
        if step.abs() <= 1e-13 * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w.max(-1.0))
}
