//! Grid evaluation of the time-resolved log-likelihood.
//!
//! For one pixel with sub-acquisition dose `mu` and `z = mu e^-eta`,
//!
//! ```text
//! l(eta) = n (z - mu) + S ln eta + N (ln mu - eta)
//!        + sum_{y >= 2} c_y ln Q_y(z) - sum_k ln y_k!
//! ```
//!
//! where `S` is the total count, `N` the number of non-empty
//! sub-acquisitions and `c_y` the multiplicity of count `y`. This is the
//! histogram-weighted sum of Neyman Type A log-PMFs, term for term.

use std::collections::BTreeMap;

use statrs::function::factorial::ln_factorial;

use crate::distributions::{neyman_log_pmf, NeymanParams, StirlingTable};

use super::EtaGrid;

/// Sufficient statistics of one pixel's count vector.
#[derive(Debug, Clone, Default)]
pub(crate) struct PixelSummary {
    n: f64,
    total: f64,
    nonzero: f64,
    ln_fact: f64,
    /// counts in `2..=StirlingTable::MAX_COUNT` with multiplicities
    mid: Vec<(usize, f64)>,
    /// counts too large for the Stirling route
    large: Vec<(u64, f64)>,
}

impl PixelSummary {
    pub(crate) fn from_counts(counts: &[u32], max_stirling: usize) -> Self {
        let mut hist: BTreeMap<u32, usize> = BTreeMap::new();
        for &c in counts {
            *hist.entry(c).or_insert(0) += 1;
        }
        let mut s = PixelSummary::default();
        for (&y, &m) in &hist {
            let mf = m as f64;
            if (y as usize) > max_stirling {
                s.large.push((y as u64, mf));
                continue;
            }
            s.n += mf;
            if y == 0 {
                continue;
            }
            s.total += mf * y as f64;
            s.nonzero += mf;
            s.ln_fact += mf * ln_factorial(y as u64);
            if y >= 2 {
                s.mid.push((y as usize, mf));
            }
        }
        s
    }

    fn max_mid(&self) -> usize {
        self.mid.last().map_or(0, |&(y, _)| y)
    }
}

pub(crate) struct GridKernel<'a> {
    pub etas: Vec<f64>,
    ln_eta: Vec<f64>,
    exp_neg: Vec<f64>,
    table: &'a StirlingTable,
}

impl<'a> GridKernel<'a> {
    pub(crate) fn new(grid: &EtaGrid, table: &'a StirlingTable) -> Self {
        let etas = grid.points();
        Self {
            ln_eta: etas.iter().map(|e| e.ln()).collect(),
            exp_neg: etas.iter().map(|e| (-e).exp()).collect(),
            etas,
            table,
        }
    }

    #[inline]
    fn base(&self, s: &PixelSummary, g: usize, mu: f64, ln_mu: f64, z: f64) -> f64 {
        let mut l = s.n * (z - mu) + s.nonzero * (ln_mu - self.etas[g]) - s.ln_fact;
        if s.total > 0.0 {
            l += s.total * self.ln_eta[g];
        }
        for &(y, m) in &s.large {
            l += m * neyman_log_pmf(
                y,
                NeymanParams {
                    eta: self.etas[g],
                    lambda: mu,
                },
            );
        }
        l
    }

    /// Log-likelihood at every grid point for sub-acquisition dose `mu`.
    #[cfg(test)]
    pub(crate) fn profile(&self, s: &PixelSummary, mu: f64) -> Vec<f64> {
        let ln_mu = mu.ln();
        (0..self.etas.len())
            .map(|g| {
                let z = mu * self.exp_neg[g];
                let mut l = self.base(s, g, mu, ln_mu, z);
                for &(y, m) in &s.mid {
                    l += m * self.table.ln_reduced_touchard(y, z);
                }
                l
            })
            .collect()
    }

    /// Index of the maximising grid point, ties resolved to the smaller eta.
    pub(crate) fn argmax(&self, s: &PixelSummary, mu: f64) -> usize {
        let ln_mu = mu.ln();
        let mut best = f64::NEG_INFINITY;
        let mut best_g = 0;
        for g in 0..self.etas.len() {
            let z = mu * self.exp_neg[g];
            let mut l = self.base(s, g, mu, ln_mu, z);
            for &(y, m) in &s.mid {
                l += m * self.table.ln_reduced_touchard(y, z);
            }
            if l > best {
                best = l;
                best_g = g;
            }
        }
        best_g
    }
}

/// Precomputed `ln Q_y(z_g)` rows for a dose shared by many pixels.
pub(crate) struct SharedDoseKernel<'a> {
    kernel: &'a GridKernel<'a>,
    mu: f64,
    ln_mu: f64,
    z: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl<'a> SharedDoseKernel<'a> {
    pub(crate) fn new(kernel: &'a GridKernel<'a>, mu: f64, max_count: usize) -> Self {
        let z: Vec<f64> = kernel.exp_neg.iter().map(|e| mu * e).collect();
        let rows = (0..=max_count)
            .map(|y| {
                if y < 2 {
                    Vec::new()
                } else {
                    z.iter()
                        .map(|&zg| kernel.table.ln_reduced_touchard(y, zg))
                        .collect()
                }
            })
            .collect();
        Self {
            kernel,
            mu,
            ln_mu: mu.ln(),
            z,
            rows,
        }
    }

    pub(crate) fn argmax(&self, s: &PixelSummary) -> usize {
        debug_assert!(s.max_mid() < self.rows.len());
        let mut best = f64::NEG_INFINITY;
        let mut best_g = 0;
        for g in 0..self.z.len() {
            let mut l = self.kernel.base(s, g, self.mu, self.ln_mu, self.z[g]);
            for &(y, m) in &s.mid {
                l += m * self.rows[y][g];
            }
            if l > best {
                best = l;
                best_g = g;
            }
        }
        best_g
    }
}
