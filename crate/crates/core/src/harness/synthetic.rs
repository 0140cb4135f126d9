//! Built-in ground-truth patterns, remapped into a yield range.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::YieldImage;
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Gradient,
    Checkerboard,
    Blobs,
}

/// Raw pattern intensities, not yet normalized.
pub fn pattern_values(pattern: Pattern, width: usize, height: usize, seed: u64) -> Vec<f64> {
    let fx = |x: usize| x as f64 / (width.max(2) - 1) as f64;
    let fy = |y: usize| y as f64 / (height.max(2) - 1) as f64;
    match pattern {
        Pattern::Gradient => (0..width * height)
            .map(|i| 0.5 * (fx(i % width) + fy(i / width)))
            .collect(),
        Pattern::Checkerboard => {
            let cell = (width.min(height) / 8).max(1);
            (0..width * height)
                .map(|i| (((i % width) / cell + (i / width) / cell) % 2) as f64)
                .collect()
        }
        Pattern::Blobs => {
            let mut rng = stream(seed, Domain::Truth, 0);
            let blobs: Vec<(f64, f64, f64, f64)> = (0..14)
                .map(|_| {
                    (
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.04..0.18),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect();
            (0..width * height)
                .map(|i| {
                    let (x, y) = (fx(i % width), fy(i / width));
                    // weak background tilt keeps the image from being flat between blobs
                    let mut v = 0.3 * x + 0.2 * y;
                    for &(cx, cy, r, amp) in &blobs {
                        let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                        v += amp * (-d2 / (2.0 * r * r)).exp();
                    }
                    v
                })
                .collect()
        }
    }
}

/// Affine map of `values` onto `[eta_min, eta_max]`; a constant input maps to the midpoint.
pub fn remap(values: &[f64], eta_min: f64, eta_max: f64) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5 * (eta_min + eta_max); values.len()];
    }
    values
        .iter()
        .map(|v| eta_min + (eta_max - eta_min) * (v - lo) / (hi - lo))
        .collect()
}

pub fn synthetic_truth(
    pattern: Pattern,
    width: usize,
    height: usize,
    eta_range: [f64; 2],
    seed: u64,
) -> Result<YieldImage> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("truth.width/height", "must be >= 1"));
    }
    let raw = pattern_values(pattern, width, height, seed);
    YieldImage::new(width, height, remap(&raw, eta_range[0], eta_range[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remap_hits_range() {
        for p in [Pattern::Gradient, Pattern::Checkerboard, Pattern::Blobs] {
            let img = synthetic_truth(p, 32, 24, [1.0, 5.0], 0).unwrap();
            let lo = img.values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = img.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(
                (lo - 1.0).abs() < 1e-12 && (hi - 5.0).abs() < 1e-12,
                "{p:?}"
            );
        }
        assert_eq!(remap(&[3.0, 3.0], 1.0, 5.0), vec![3.0, 3.0]);
    }

    #[test]
    fn blobs_depend_on_seed_only() {
        let a = pattern_values(Pattern::Blobs, 16, 16, 1);
        assert_eq!(a, pattern_values(Pattern::Blobs, 16, 16, 1));
        assert_ne!(a, pattern_values(Pattern::Blobs, 16, 16, 2));
    }
}
