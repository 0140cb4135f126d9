//! AR(1) model of beam-current drift over raster-ordered pixels.
//!
//! `lambda_p = x_p + a * lambda_{p-1} + c` with `x_p ~ N(0, sigma_x^2)`.
//! The stationary mean is `c / (1 - a)`, which equals the nominal dose when
//! `c = lambda_nominal * (1 - a)`, and the stationary variance is
//! `sigma_x^2 / (1 - a^2)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Parameters of the AR(1) dose process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ARParams {
    pub a: f64,
    pub c: f64,
    pub sigma_x_sq: f64,
    pub lambda_nominal: f64,
}

impl ARParams {
    pub fn new(a: f64, c: f64, sigma_x_sq: f64, lambda_nominal: f64) -> Result<Self> {
        ensure_finite("a", a)?;
        ensure_finite("c", c)?;
        ensure_finite("sigma_x_sq", sigma_x_sq)?;
        ensure_finite("lambda_nominal", lambda_nominal)?;
        if !(0.0..1.0).contains(&a) {
            return Err(Error::invalid("a", format!("must lie in [0, 1), got {a}")));
        }
        if sigma_x_sq < 0.0 {
            return Err(Error::invalid("sigma_x_sq", "must be >= 0"));
        }
        if lambda_nominal <= 0.0 {
            return Err(Error::invalid("lambda_nominal", "must be > 0"));
        }
        let expected_c = lambda_nominal * (1.0 - a);
        if (c - expected_c).abs() > 1e-12 * expected_c.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::invalid(
                "c",
                format!("must equal lambda_nominal * (1 - a) = {expected_c}, got {c}"),
            ));
        }
        Ok(Self {
            a,
            c,
            sigma_x_sq,
            lambda_nominal,
        })
    }

    /// Builds the process whose stationary standard deviation is `cv * lambda_nominal`.
    pub fn from_spec(lambda_nominal: f64, cv: f64, a: f64) -> Result<Self> {
        ensure_finite("cv", cv)?;
        if cv < 0.0 {
            return Err(Error::invalid("cv", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&a) {
            return Err(Error::invalid(
                "a",
                format!("must lie in [0, 1) for a stationary process, got {a}"),
            ));
        }
        if !(lambda_nominal > 0.0) || !lambda_nominal.is_finite() {
            return Err(Error::invalid("lambda_nominal", "must be finite and > 0"));
        }
        let sigma = cv * lambda_nominal;
        Self::new(
            a,
            lambda_nominal * (1.0 - a),
            sigma * sigma * (1.0 - a * a),
            lambda_nominal,
        )
    }

    pub fn stationary_variance(&self) -> f64 {
        self.sigma_x_sq / (1.0 - self.a * self.a)
    }

    pub fn stationary_std(&self) -> f64 {
        self.stationary_variance().sqrt()
    }

    /// Same nominal dose and coefficient of variation, different correlation.
    pub fn with_correlation(&self, a: f64) -> Result<Self> {
        Self::from_spec(
            self.lambda_nominal,
            self.stationary_std() / self.lambda_nominal,
            a,
        )
    }

    /// Lower bound applied to every dose value and dose estimate.
    pub fn dose_floor(&self) -> f64 {
        0.01 * self.lambda_nominal
    }
}

/// Shorthand for [`ARParams::from_spec`].
pub fn ar_params_from_spec(lambda_nominal: f64, cv: f64, a: f64) -> Result<ARParams> {
    ARParams::from_spec(lambda_nominal, cv, a)
}

/// One-step prior for the next pixel: `(a * prev + c, sigma_x^2)`.
#[inline]
pub fn prior_step_moments(prev_lambda_hat: f64, params: &ARParams) -> (f64, f64) {
    (params.a * prev_lambda_hat + params.c, params.sigma_x_sq)
}

/// Realised dose per pixel in raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseField {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub params: ARParams,
    /// Number of pixels raised to the dose floor.
    pub clamped: usize,
}

impl DoseField {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Runs the AR(1) recursion over `width * height` pixels in row-major order.
///
/// The first value is drawn from the stationary law. The recursion evolves
/// the unclamped process; only the stored values are floored at
/// `0.01 * lambda_nominal`.
pub fn generate_dose_field<R: Rng + ?Sized>(
    params: &ARParams,
    width: usize,
    height: usize,
    rng: &mut R,
) -> Result<DoseField> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("width/height", "must be >= 1"));
    }
    let pixels = width * height;
    let floor = params.dose_floor();
    let sigma_x = params.sigma_x_sq.sqrt();
    let mut values = Vec::with_capacity(pixels);
    let mut clamped = 0;

    let mut latent = if params.sigma_x_sq > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        params.lambda_nominal + params.stationary_std() * z
    } else {
        params.lambda_nominal
    };
    for p in 0..pixels {
        if p > 0 {
            let x = if sigma_x > 0.0 {
                sigma_x * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            latent = x + params.a * latent + params.c;
        }
        if latent < floor {
            clamped += 1;
            values.push(floor);
        } else {
            values.push(latent);
        }
    }
    Ok(DoseField {
        width,
        height,
        values,
        params: *params,
        clamped,
    })
}
