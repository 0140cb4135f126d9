//! Sequential linear-MMSE dose estimation along the raster order.
//!
//! At pixel `p`, with prior mean `P = a * lambda_hat_{p-1} + c` and
//! prior variance `V = sigma_x^2 + a^2 sigma_eps^2`, the filter output is
//! `P + cov / var_y * (y_p - eta_hat_p * P)` where
//!
//! ```text
//! cov   = eta_hat V
//! var_y = P (eta_hat + eta_hat^2 + sigma_gamma^2) + sigma_gamma^2 (V + P^2) + eta_hat^2 V
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{AggregatedMeasurement, TRMeasurement};
use crate::beam_model::ARParams;
use crate::distributions::{sample_neyman, NeymanParams};
use crate::error::{ensure_finite, Error, Result};
use crate::estimators::{qm_eta, trml_eta, AssumedDose, EtaGrid};
use crate::grid::{check_dims, YieldImage};
use crate::rng::{stream, Domain};

/// Error variances of the previous dose estimate and the current yield estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterNoiseParams {
    pub sigma_eps_sq: f64,
    pub sigma_gamma_sq: f64,
}

impl FilterNoiseParams {
    pub const ZERO: Self = Self {
        sigma_eps_sq: 0.0,
        sigma_gamma_sq: 0.0,
    };

    pub fn new(sigma_eps_sq: f64, sigma_gamma_sq: f64) -> Result<Self> {
        ensure_finite("sigma_eps_sq", sigma_eps_sq)?;
        ensure_finite("sigma_gamma_sq", sigma_gamma_sq)?;
        if sigma_eps_sq < 0.0 {
            return Err(Error::invalid("sigma_eps_sq", "must be >= 0"));
        }
        if sigma_gamma_sq < 0.0 {
            return Err(Error::invalid("sigma_gamma_sq", "must be >= 0"));
        }
        Ok(Self {
            sigma_eps_sq,
            sigma_gamma_sq,
        })
    }
}

/// Second-order terms of one filter update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterTerms {
    pub prior_mean: f64,
    pub prior_var: f64,
    pub cov: f64,
    pub var_y: f64,
}

impl FilterTerms {
    /// `cov / var_y`, or 0 when `var_y` is degenerate.
    pub fn gain(&self) -> f64 {
        if self.var_y > 0.0 && self.var_y.is_finite() {
            self.cov / self.var_y
        } else {
            0.0
        }
    }

    /// Squared correlation `cov^2 / (var(lambda_p) var(y_p))`.
    pub fn squared_correlation(&self) -> f64 {
        let den = self.prior_var * self.var_y;
        if den > 0.0 {
            self.cov * self.cov / den
        } else {
            0.0
        }
    }

    fn update(&self, y: f64, eta_hat: f64, floor: f64) -> f64 {
        if !(self.var_y > 0.0 && self.var_y.is_finite()) {
            return self.prior_mean.max(floor);
        }
        let est = self.cov / self.var_y * (y - eta_hat * self.prior_mean) + self.prior_mean;
        est.max(floor)
    }
}

pub fn filter_terms(
    eta_hat: f64,
    lambda_hat_prev: f64,
    ar: &ARParams,
    noise: &FilterNoiseParams,
) -> FilterTerms {
    let p = ar.a * lambda_hat_prev + ar.c;
    let v = ar.sigma_x_sq + ar.a * ar.a * noise.sigma_eps_sq;
    let g = noise.sigma_gamma_sq;
    let e2 = eta_hat * eta_hat;
    FilterTerms {
        prior_mean: p,
        prior_var: v,
        cov: eta_hat * v,
        var_y: p * (eta_hat + e2 + g) + g * (v + p * p) + e2 * v,
    }
}

/// Terms when the true yield and previous dose are known.
pub fn ideal_filter_terms(eta: f64, lambda_prev: f64, ar: &ARParams) -> FilterTerms {
    let p = ar.a * lambda_prev + ar.c;
    FilterTerms {
        prior_mean: p,
        prior_var: ar.sigma_x_sq,
        cov: eta * ar.sigma_x_sq,
        var_y: p * (eta + eta * eta) + eta * eta * ar.sigma_x_sq,
    }
}

/// One update; the result never falls below the dose floor.
pub fn filter_step(
    y: f64,
    eta_hat: f64,
    lambda_hat_prev: f64,
    ar: &ARParams,
    noise: &FilterNoiseParams,
) -> f64 {
    filter_terms(eta_hat, lambda_hat_prev, ar, noise).update(y, eta_hat, ar.dose_floor())
}

pub fn ideal_filter_step(y: f64, eta: f64, lambda_prev: f64, ar: &ARParams) -> f64 {
    ideal_filter_terms(eta, lambda_prev, ar).update(y, eta, ar.dose_floor())
}

/// Self-consistent `sigma_eps^2` for average yield `eta_bar` and dose `lambda_bar`.
///
/// Solves `x = V - cov^2 / var_y` with `V = s + a^2 x` and `s = sigma_x^2`.
/// Writing `var_y = A + B V`, the fixed point is the unique nonnegative root
/// of `a^2 (B - a^2 g) x^2 + (A (1 - a^2) + B s - 2 a^2 g s) x - s (A + g s)`.
pub fn select_sigma_eps(
    ar: &ARParams,
    eta_bar: f64,
    lambda_bar: f64,
    sigma_gamma_sq: f64,
) -> Result<f64> {
    ensure_finite("eta_bar", eta_bar)?;
    ensure_finite("lambda_bar", lambda_bar)?;
    ensure_finite("sigma_gamma_sq", sigma_gamma_sq)?;
    if eta_bar < 0.0 || lambda_bar < 0.0 || sigma_gamma_sq < 0.0 {
        return Err(Error::invalid(
            "select_sigma_eps",
            "eta_bar, lambda_bar and sigma_gamma_sq must be >= 0",
        ));
    }
    let s = ar.sigma_x_sq;
    let a2 = ar.a * ar.a;
    let g = sigma_gamma_sq;
    let e2 = eta_bar * eta_bar;
    let p = ar.a * lambda_bar + ar.c;
    let big_a = p * (eta_bar + e2 + g) + g * p * p;
    let big_b = g + e2;

    if s == 0.0 {
        return Ok(0.0);
    }
    if big_b == 0.0 && big_a == 0.0 {
        // no measurement information: stationary variance
        return Ok(s / (1.0 - a2));
    }

    let q2 = a2 * (g * (1.0 - a2) + e2);
    let q1 = big_a * (1.0 - a2) + big_b * s - 2.0 * g * s * a2;
    let q0 = -s * (big_a + g * s);
    let x = if q2 == 0.0 {
        -q0 / q1
    } else {
        let disc = (q1 * q1 - 4.0 * q2 * q0).max(0.0).sqrt();
        if q1 >= 0.0 {
            -2.0 * q0 / (q1 + disc)
        } else {
            (disc - q1) / (2.0 * q2)
        }
    };
    let x = x.clamp(0.0, s / (1.0 - a2));
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NoConvergence { iterations: 0 })
    }
}

/// One Monte Carlo cell: TRML error at `(lambda, eta)` with correct dose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub lambda: f64,
    pub eta: f64,
    pub mse: f64,
    pub std_err: f64,
}

/// Rectangular table of TRML mean-squared errors.
#[derive(Debug, Clone, PartialEq)]
pub struct MseTable {
    pub rows: Vec<MseRow>,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
}

impl MseTable {
    pub fn new(rows: Vec<MseRow>, n: usize, trials: usize, seed: u64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("mse_table", "table has no rows"));
        }
        for r in &rows {
            if !(r.mse > 0.0 && r.mse.is_finite()) {
                return Err(Error::invalid(
                    "mse_table",
                    format!(
                        "mse at (lambda={}, eta={}) must be finite and > 0",
                        r.lambda, r.eta
                    ),
                ));
            }
            if !(r.lambda.is_finite() && r.eta.is_finite() && r.std_err.is_finite()) {
                return Err(Error::invalid("mse_table", "non-finite entry"));
            }
        }
        let mut lambdas: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
        let mut etas: Vec<f64> = rows.iter().map(|r| r.eta).collect();
        for v in [&mut lambdas, &mut etas] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        if lambdas.len() * etas.len() != rows.len() {
            return Err(Error::invalid(
                "mse_table",
                format!(
                    "grid is incomplete: {} rows for {} x {} nodes",
                    rows.len(),
                    lambdas.len(),
                    etas.len()
                ),
            ));
        }
        Ok(Self {
            rows,
            n,
            trials,
            seed,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# mse_table n={} trials={} seed={}\nlambda,eta,mse,std_err\n",
            self.n, self.trials, self.seed
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:?},{:?},{:?},{:?}",
                r.lambda, r.eta, r.mse, r.std_err
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            what: "mse_table",
            path: "<input>".into(),
            reason,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let meta = header
            .strip_prefix("# mse_table")
            .ok_or_else(|| bad("missing '# mse_table' header".into()))?;
        let (mut n, mut trials, mut seed) = (None, None, None);
        for kv in meta.split_whitespace() {
            match kv.split_once('=') {
                Some(("n", v)) => n = v.parse::<usize>().ok(),
                Some(("trials", v)) => trials = v.parse::<usize>().ok(),
                Some(("seed", v)) => seed = v.parse::<u64>().ok(),
                _ => return Err(bad(format!("unknown header field '{kv}'"))),
            }
        }
        let (n, trials, seed) = match (n, trials, seed) {
            (Some(n), Some(t), Some(s)) => (n, t, s),
            _ => return Err(bad("header needs n, trials and seed".into())),
        };
        if lines.next().map(str::trim) != Some("lambda,eta,mse,std_err") {
            return Err(bad("missing column header".into()));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("line {}: {e}", i + 3)))?;
            if f.len() != 4 {
                return Err(bad(format!("line {}: expected 4 fields", i + 3)));
            }
            rows.push(MseRow {
                lambda: f[0],
                eta: f[1],
                mse: f[2],
                std_err: f[3],
            });
        }
        Self::new(rows, n, trials, seed)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text).map_err(|e| match e {
            Error::Format { what, reason, .. } => Error::Format {
                what,
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }
}

/// TRML MSE of the table node nearest to `(lambda_nominal, eta_bar)`.
///
/// Distances are measured after dividing each axis by its grid span. Ties go
/// to the smaller eta, then the smaller lambda.
pub fn select_sigma_gamma(lambda_nominal: f64, eta_bar: f64, table: &MseTable) -> Result<f64> {
    if table.rows.is_empty() {
        return Err(Error::invalid("mse_table", "table has no rows"));
    }
    let span = |f: fn(&MseRow) -> f64| {
        let (lo, hi) = table
            .rows
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
                (l.min(v), h.max(v))
            });
        if hi > lo {
            hi - lo
        } else {
            1.0
        }
    };
    let sl = span(|r| r.lambda);
    let se = span(|r| r.eta);
    let key = |r: &MseRow| {
        let dl = (r.lambda - lambda_nominal) / sl;
        let de = (r.eta - eta_bar) / se;
        (dl * dl + de * de, r.eta, r.lambda)
    };
    let best = table
        .rows
        .iter()
        .min_by(|x, y| {
            let (a, b) = (key(x), key(y));
            a.0.total_cmp(&b.0)
                .then(a.1.total_cmp(&b.1))
                .then(a.2.total_cmp(&b.2))
        })
        .expect("non-empty");
    Ok(best.mse)
}

/// Grid and Monte Carlo settings for [`build_mse_table`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseTableSpec {
    pub lambdas: Vec<f64>,
    pub etas: Vec<f64>,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    /// Lower bound on the TRML grid cap.
    pub grid_floor: f64,
}

impl MseTableSpec {
    pub const MIN_TRIALS: usize = 1000;
    pub const DEFAULT_TRIALS: usize = 10_000;

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.etas.is_empty() {
            return Err(Error::invalid(
                "table",
                "lambda and eta grids must be non-empty",
            ));
        }
        if self.lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::invalid(
                "table.lambdas",
                "values must be finite and > 0",
            ));
        }
        if self.etas.iter().any(|&e| !(e >= 0.0 && e.is_finite())) {
            return Err(Error::invalid(
                "table.etas",
                "values must be finite and >= 0",
            ));
        }
        if self.n == 0 {
            return Err(Error::invalid("table.n", "must be >= 1"));
        }
        if self.trials < Self::MIN_TRIALS {
            return Err(Error::invalid(
                "table.trials",
                format!("must be >= {}", Self::MIN_TRIALS),
            ));
        }
        if !(self.grid_floor > 0.0 && self.grid_floor.is_finite()) {
            return Err(Error::invalid("table.grid_floor", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Draws `trials` independent single-pixel measurements at `(eta, lambda)`.
pub(crate) fn simulate_trials(
    eta: f64,
    lambda: f64,
    n: usize,
    trials: usize,
    seed: u64,
    domain: Domain,
    block: u64,
) -> Result<TRMeasurement> {
    let params = NeymanParams::new(eta, lambda / n as f64)?;
    let mut counts = vec![0u32; trials * n];
    counts.par_chunks_mut(n).enumerate().for_each(|(t, slot)| {
        let mut rng = stream(seed, domain, (block << 32) | t as u64);
        for c in slot {
            *c = sample_neyman(params, &mut rng) as u32;
        }
    });
    TRMeasurement::from_counts(trials, 1, n, counts)
}

/// Monte Carlo TRML error over the `lambdas x etas` grid.
pub fn build_mse_table(spec: &MseTableSpec) -> Result<MseTable> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.lambdas.len() * spec.etas.len());
    for (li, &lambda) in spec.lambdas.iter().enumerate() {
        for (ei, &eta) in spec.etas.iter().enumerate() {
            let cell = (li * spec.etas.len() + ei) as u64;
            let tr = simulate_trials(
                eta,
                lambda,
                spec.n,
                spec.trials,
                spec.seed,
                Domain::Table,
                cell,
            )?;
            let grid = EtaGrid::from_qm(&qm_eta(&tr).values, spec.grid_floor)?;
            let est = trml_eta(&tr, AssumedDose::Scalar(lambda), &grid)?;
            let sq: Vec<f64> = est.values.iter().map(|e| (e - eta).powi(2)).collect();
            let t = sq.len() as f64;
            let mse = sq.iter().sum::<f64>() / t;
            let var = sq.iter().map(|v| (v - mse).powi(2)).sum::<f64>() / (t - 1.0);
            rows.push(MseRow {
                lambda,
                eta,
                mse,
                std_err: (var / t).sqrt(),
            });
        }
    }
    MseTable::new(rows, spec.n, spec.trials, spec.seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// Runs the filter over the raster order, starting from `init`.
///
/// The backward pass visits pixels in descending raster order with the same
/// AR parameters. The trace is returned in raster order either way.
pub fn run_filter_pass(
    agg: &AggregatedMeasurement,
    eta_hat: &YieldImage,
    ar: &ARParams,
    noise: &FilterNoiseParams,
    direction: Direction,
    init: f64,
) -> Result<Vec<f64>> {
    check_dims("measurement", agg.dims(), "eta_hat", eta_hat.dims())?;
    ensure_finite("init", init)?;
    let len = agg.totals.len();
    let mut out = vec![0.0; len];
    let mut prev = init;
    let mut visit = |p: usize| {
        prev = filter_step(agg.totals[p] as f64, eta_hat.values[p], prev, ar, noise);
        out[p] = prev;
    };
    match direction {
        Direction::Forward => (0..len).for_each(&mut visit),
        Direction::Backward => (0..len).rev().for_each(&mut visit),
    }
    Ok(out)
}

/// Elementwise mean of the forward and backward traces.
pub fn run_bidirectional(
    agg: &AggregatedMeasurement,
    eta_hat: &YieldImage,
    ar: &ARParams,
    noise: &FilterNoiseParams,
    init: f64,
) -> Result<Vec<f64>> {
    let (fwd, bwd) = rayon::join(
        || run_filter_pass(agg, eta_hat, ar, noise, Direction::Forward, init),
        || run_filter_pass(agg, eta_hat, ar, noise, Direction::Backward, init),
    );
    let (fwd, bwd) = (fwd?, bwd?);
    Ok(fwd.iter().zip(&bwd).map(|(f, b)| 0.5 * (f + b)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn ar_example() -> ARParams {
        ARParams::new(0.999, 0.02, 0.032, 20.0).unwrap()
    }

    #[test]
    fn worked_step_matches_substitution_oracle() {
        let noise = FilterNoiseParams::new(0.5, 0.05).unwrap();
        let t = filter_terms(5.0, 20.0, &ar_example(), &noise);
        assert!((t.gain() - 0.0041857101682535383).abs() < 1e-15);
        let est = filter_step(110.0, 5.0, 20.0, &ar_example(), &noise);
        assert!((est - 20.041857101682535383).abs() < 1e-12, "{est}");
    }

    #[test]
    fn zero_gain_is_pure_prior() {
        let ar = ARParams::new(0.9, 2.0, 0.0, 20.0).unwrap();
        for y in [0.0, 50.0, 1e4] {
            assert_eq!(
                filter_step(y, 3.0, 17.0, &ar, &FilterNoiseParams::ZERO),
                0.9 * 17.0 + 2.0
            );
        }
    }

    #[test]
    fn zero_innovation_is_fixed_point() {
        let ar = ar_example();
        let noise = FilterNoiseParams::new(0.5, 0.05).unwrap();
        let prior = 0.999 * 18.0 + 0.02;
        let est = filter_step(4.0 * prior, 4.0, 18.0, &ar, &noise);
        assert!((est - prior).abs() < 1e-12);
    }

    #[test]
    fn degenerate_variance_falls_back_to_prior() {
        let ar = ARParams::new(0.5, 10.0, 0.0, 20.0).unwrap();
        // eta = 0 and prior mean 0 give var_y = 0
        let t = filter_terms(0.0, -20.0, &ar, &FilterNoiseParams::ZERO);
        assert_eq!(t.var_y, 0.0);
        assert_eq!(
            filter_step(3.0, 0.0, -20.0, &ar, &FilterNoiseParams::ZERO),
            ar.dose_floor()
        );
    }

    #[test]
    fn output_is_floored() {
        let ar = ARParams::new(0.9, 2.0, 100.0, 20.0).unwrap();
        assert_eq!(
            filter_step(0.0, 5.0, 0.0, &ar, &FilterNoiseParams::ZERO),
            0.2
        );
    }

    #[test]
    fn ideal_terms() {
        let ar = ar_example();
        let t = ideal_filter_terms(3.0, 20.0, &ar);
        assert_eq!(t.cov, 3.0 * ar.sigma_x_sq);
        let z = filter_terms(3.0, 20.0, &ar, &FilterNoiseParams::ZERO);
        assert_eq!(t, z);
    }

    #[test]
    fn random_draws_identities() {
        let mut rng = stream(77, Domain::Trials, 0);
        for _ in 0..1000 {
            let lam: f64 = rng.random_range(1.0..300.0);
            let cv: f64 = rng.random_range(0.0..0.5);
            let a: f64 = rng.random_range(0.0..0.9999);
            let ar = ARParams::from_spec(lam, cv, a).unwrap();
            let eta: f64 = rng.random_range(0.0..10.0);
            let prev: f64 = rng.random_range(0.5 * lam..1.5 * lam);
            let y: f64 = rng.random_range(0.0..3.0 * lam * eta.max(0.1));
            let noise =
                FilterNoiseParams::new(rng.random_range(0.0..5.0), rng.random_range(0.0..1.0))
                    .unwrap();

            let ideal = ideal_filter_terms(eta, prev, &ar);
            let zero = filter_terms(eta, prev, &ar, &FilterNoiseParams::ZERO);
            for (u, v) in [
                (ideal.cov, zero.cov),
                (ideal.var_y, zero.var_y),
                (ideal.prior_mean, zero.prior_mean),
            ] {
                assert!((u - v).abs() <= 1e-12 * u.abs().max(f64::MIN_POSITIVE));
            }
            let s1 = ideal_filter_step(y, eta, prev, &ar);
            let s2 = filter_step(y, eta, prev, &ar, &FilterNoiseParams::ZERO);
            assert!((s1 - s2).abs() <= 1e-12 * s1.abs());

            let t = filter_terms(eta, prev, &ar, &noise);
            let rho2 = t.squared_correlation();
            assert!((0.0..=1.0 + 1e-12).contains(&rho2), "{rho2}");
            assert!(t.gain() >= 0.0);
        }
    }

    proptest! {
        #[test]
        fn step_is_affine_in_count(
            eta in 0.1f64..8.0, prev in 10.0f64..30.0, y1 in 0.0f64..400.0, y2 in 0.0f64..400.0,
            se in 0.0f64..3.0, sg in 0.0f64..0.5,
        ) {
            let ar = ARParams::from_spec(20.0, 0.2, 0.99).unwrap();
            let noise = FilterNoiseParams::new(se, sg).unwrap();
            let t = filter_terms(eta, prev, &ar, &noise);
            let l1 = filter_step(y1, eta, prev, &ar, &noise);
            let l2 = filter_step(y2, eta, prev, &ar, &noise);
            prop_assume!(l1 > ar.dose_floor() && l2 > ar.dose_floor());
            prop_assert!(((l1 - l2) - t.gain() * (y1 - y2)).abs() < 1e-9);
        }

        #[test]
        fn sigma_eps_is_self_consistent(
            a in 0.0f64..0.9999, cv in 0.01f64..0.5, eta in 0.0f64..8.0, g in 0.0f64..1.0,
        ) {
            let ar = ARParams::from_spec(20.0, cv, a).unwrap();
            let x = select_sigma_eps(&ar, eta, 20.0, g).unwrap();
            prop_assert!(x >= 0.0 && x <= ar.stationary_variance() * (1.0 + 1e-12));
            let noise = FilterNoiseParams::new(x, g).unwrap();
            let t = filter_terms(eta, 20.0, &ar, &noise);
            let fx = t.prior_var - t.cov * t.cov / t.var_y;
            prop_assert!((fx - x).abs() <= 1e-9 * x.max(1e-12), "x={} f(x)={}", x, fx);
        }
    }

    #[test]
    fn sigma_eps_worked_example_and_scan() {
        let ar = ar_example();
        let x = select_sigma_eps(&ar, 3.0, 20.0, 0.05).unwrap();
        assert!((x - 0.92035185448130107229).abs() < 1e-10, "{x}");

        // dense scan for the sign change of f(x) - x
        let f = |x: f64| {
            let t = filter_terms(3.0, 20.0, &ar, &FilterNoiseParams::new(x, 0.05).unwrap());
            t.prior_var - t.cov * t.cov / t.var_y - x
        };
        let hi = ar.stationary_variance();
        let steps = (hi / 1e-6) as usize;
        let root = (0..steps)
            .map(|i| i as f64 * 1e-6)
            .find(|&v| f(v) <= 0.0)
            .unwrap();
        assert!((root - x).abs() <= 1e-6);
    }

    #[test]
    fn sigma_eps_limits() {
        let ar = ar_example();
        let x0 = select_sigma_eps(&ar, 0.0, 20.0, 0.05).unwrap();
        assert!((x0 - ar.stationary_variance()).abs() < 1e-9 * x0);
        let x0 = select_sigma_eps(&ar, 0.0, 20.0, 0.0).unwrap();
        assert!((x0 - ar.stationary_variance()).abs() < 1e-9 * x0);
        let flat = ARParams::from_spec(20.0, 0.0, 0.999).unwrap();
        assert_eq!(select_sigma_eps(&flat, 0.0, 20.0, 0.0).unwrap(), 0.0);
        assert_eq!(select_sigma_eps(&flat, 3.0, 20.0, 0.05).unwrap(), 0.0);
        let white = ARParams::from_spec(20.0, 0.2, 0.0).unwrap();
        let xw = select_sigma_eps(&white, 2.0, 20.0, 0.1).unwrap();
        assert!(xw > 0.0 && xw < white.sigma_x_sq);
        assert!(select_sigma_eps(&ar, -1.0, 20.0, 0.0).is_err());
    }

    #[test]
    fn sigma_eps_decreases_with_eta() {
        let ar = ar_example();
        let mut last = f64::INFINITY;
        for i in 0..=60 {
            let x = select_sigma_eps(&ar, i as f64 * 0.1, 20.0, 0.05).unwrap();
            assert!(x <= ar.stationary_variance());
            assert!(x <= last, "eta={} x={x} last={last}", i as f64 * 0.1);
            last = x;
        }
    }

    fn toy_table() -> MseTable {
        let mut rows = Vec::new();
        for (i, &l) in [10.0, 20.0, 30.0].iter().enumerate() {
            for (j, &e) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
                rows.push(MseRow {
                    lambda: l,
                    eta: e,
                    mse: 1.0 + (i * 10 + j) as f64,
                    std_err: 0.01,
                });
            }
        }
        MseTable::new(rows, 200, 1000, 1).unwrap()
    }

    #[test]
    fn sigma_gamma_lookup() {
        let t = toy_table();
        assert_eq!(select_sigma_gamma(20.0, 3.0, &t).unwrap(), 13.0);
        // midway in eta: tie to the smaller eta
        assert_eq!(select_sigma_gamma(20.0, 2.5, &t).unwrap(), 12.0);
        let one = MseTable::new(vec![t.rows[5]], 200, 1000, 1).unwrap();
        assert_eq!(select_sigma_gamma(1e3, -4.0, &one).unwrap(), t.rows[5].mse);
    }

    #[test]
    fn sigma_gamma_matches_brute_force() {
        let mut rng = stream(5, Domain::Trials, 1);
        let lambdas: Vec<f64> = (0..5).map(|i| 5.0 + 7.0 * i as f64).collect();
        let etas: Vec<f64> = (0..5).map(|i| 0.5 + 1.3 * i as f64).collect();
        let rows: Vec<MseRow> = lambdas
            .iter()
            .flat_map(|&l| etas.iter().map(move |&e| (l, e)))
            .map(|(lambda, eta)| MseRow {
                lambda,
                eta,
                mse: rng.random_range(0.01..2.0),
                std_err: 0.0,
            })
            .collect();
        let table = MseTable::new(rows.clone(), 10, 1000, 0).unwrap();
        for _ in 0..200 {
            let ql: f64 = rng.random_range(0.0..40.0);
            let qe: f64 = rng.random_range(0.0..7.0);
            let mut best = (f64::INFINITY, 0.0);
            for r in &rows {
                let d = ((r.lambda - ql) / 28.0).powi(2) + ((r.eta - qe) / 5.2).powi(2);
                if d < best.0 {
                    best = (d, r.mse);
                }
            }
            assert_eq!(select_sigma_gamma(ql, qe, &table).unwrap(), best.1);
        }
    }

    #[test]
    fn table_validation_and_round_trip() {
        let t = toy_table();
        let back = MseTable::from_csv(&t.to_csv()).unwrap();
        assert_eq!(back, t);
        let mut rows = t.rows.clone();
        rows.pop();
        assert!(MseTable::new(rows, 1, 1, 1).is_err());
        assert!(MseTable::new(vec![], 1, 1, 1).is_err());
        assert!(MseTable::from_csv("lambda,eta\n").is_err());
    }

    #[test]
    fn small_table_build() {
        let spec = MseTableSpec {
            lambdas: vec![10.0, 40.0],
            etas: vec![5.0],
            n: 100,
            trials: 1000,
            seed: 3,
            grid_floor: EtaGrid::HIM_FLOOR,
        };
        let a = build_mse_table(&spec).unwrap();
        let b = build_mse_table(&spec).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.rows[0].mse > a.rows[1].mse);
        assert!(a.rows.iter().all(|r| r.std_err < 0.1 * r.mse));
        assert!(build_mse_table(&MseTableSpec { trials: 10, ..spec }).is_err());
    }

    fn agg_eta(totals: Vec<u64>, eta: Vec<f64>) -> (AggregatedMeasurement, YieldImage) {
        let w = totals.len();
        (
            AggregatedMeasurement {
                width: w,
                height: 1,
                totals,
            },
            YieldImage::new(w, 1, eta).unwrap(),
        )
    }

    #[test]
    fn pass_on_toy_equals_chained_steps() {
        let ar = ar_example();
        let noise = FilterNoiseParams::new(0.4, 0.03).unwrap();
        let (agg, eta) = agg_eta(vec![90, 130, 70], vec![4.5, 5.5, 3.0]);
        let fwd = run_filter_pass(&agg, &eta, &ar, &noise, Direction::Forward, 20.0).unwrap();
        let s1 = filter_step(90.0, 4.5, 20.0, &ar, &noise);
        let s2 = filter_step(130.0, 5.5, s1, &ar, &noise);
        let s3 = filter_step(70.0, 3.0, s2, &ar, &noise);
        assert_eq!(fwd, vec![s1, s2, s3]);
        let bwd = run_filter_pass(&agg, &eta, &ar, &noise, Direction::Backward, 20.0).unwrap();
        let b3 = filter_step(70.0, 3.0, 20.0, &ar, &noise);
        let b2 = filter_step(130.0, 5.5, b3, &ar, &noise);
        let b1 = filter_step(90.0, 4.5, b2, &ar, &noise);
        assert_eq!(bwd, vec![b1, b2, b3]);
    }

    #[test]
    fn constant_data_gives_constant_trace() {
        let ar = ARParams::from_spec(20.0, 0.0, 0.999).unwrap();
        let (agg, eta) = agg_eta(vec![60; 50], vec![3.0; 50]);
        let trace = run_bidirectional(&agg, &eta, &ar, &FilterNoiseParams::ZERO, 20.0).unwrap();
        assert!(trace.iter().all(|&v| v == 20.0));
    }
}
