//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::beam_model::ARParams;
use crate::estimators::EtaGrid;
use crate::sequential_filter::MseTableSpec;

use super::synthetic::Pattern;
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTruth {
    pub pattern: Pattern,
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default)]
    pub pattern_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageTruth {
    pub path: PathBuf,
}

/// Either a built-in pattern or a grayscale image file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TruthSource {
    Synthetic(SyntheticTruth),
    Image(ImageTruth),
}

fn default_side() -> usize {
    128
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArSpec {
    pub lambda_nominal: f64,
    pub cv: f64,
    pub a: f64,
}

impl ArSpec {
    pub fn params(&self) -> Result<ARParams, HarnessError> {
        ARParams::from_spec(self.lambda_nominal, self.cv, self.a).map_err(HarnessError::from_core)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Baseline,
    Qm,
    Lqm,
    Trml,
    Ft,
    Oracle,
    Alt,
    AltOffset,
    LambdaReference,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Qm => "qm",
            Self::Lqm => "lqm",
            Self::Trml => "trml",
            Self::Ft => "ft",
            Self::Oracle => "oracle",
            Self::Alt => "alt",
            Self::AltOffset => "alt_offset",
            Self::LambdaReference => "lambda_reference",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum Sweep {
    None,
    /// Single-pixel trials with assumed dose `lambda (1 + epsilon)`.
    Epsilon {
        eta: f64,
        lambda: f64,
        n: usize,
        min: f64,
        max: f64,
        points: usize,
    },
    /// Single-pixel trials at fixed `lambda / n`.
    Dose {
        etas: Vec<f64>,
        lambdas: Vec<f64>,
        sub_dose: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    pub lambdas: Vec<f64>,
    pub etas: Vec<f64>,
    #[serde(default = "default_table_trials")]
    pub trials: usize,
}

fn default_table_trials() -> usize {
    MseTableSpec::DEFAULT_TRIALS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlternatingSettings {
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tol")]
    pub convergence_tol: f64,
}

fn default_iterations() -> usize {
    10
}

fn default_tol() -> f64 {
    1e-4
}

impl Default for AlternatingSettings {
    fn default() -> Self {
        Self {
            max_iterations: default_iterations(),
            convergence_tol: default_tol(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NullingBounds {
    pub w_max: Option<usize>,
    pub h_max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub truth: TruthSource,
    pub eta_range: [f64; 2],
    pub ar: ArSpec,
    /// Number of sub-acquisitions; exclusive with `sub_dose`.
    #[serde(default)]
    pub n: Option<usize>,
    /// Nominal dose per sub-acquisition; `n = round(lambda_nominal / sub_dose)`.
    #[serde(default)]
    pub sub_dose: Option<f64>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_sweep")]
    pub sweep: Sweep,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// MSE table used by the alternating estimator; relative to the config file.
    #[serde(default)]
    pub mse_table: Option<PathBuf>,
    #[serde(default)]
    pub table: Option<TableConfig>,
    /// Lower bound on the TRML grid cap.
    #[serde(default = "default_grid_floor")]
    pub grid_floor: f64,
    #[serde(default)]
    pub alternating: AlternatingSettings,
    #[serde(default)]
    pub nulling: NullingBounds,
}

fn default_estimators() -> Vec<EstimatorKind> {
    use EstimatorKind::*;
    vec![
        Baseline,
        Qm,
        Lqm,
        Trml,
        Ft,
        Oracle,
        Alt,
        AltOffset,
        LambdaReference,
    ]
}

fn default_sweep() -> Sweep {
    Sweep::None
}

fn default_trials() -> usize {
    10_000
}

fn default_grid_floor() -> f64 {
    EtaGrid::HIM_FLOOR
}

fn bad(field: &str, reason: impl Into<String>) -> HarnessError {
    HarnessError::Config(format!("field `{field}`: {}", reason.into()))
}

fn finite_pos(field: &str, v: f64) -> Result<(), HarnessError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(bad(field, format!("must be finite and > 0, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| HarnessError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::MissingArtifact(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let TruthSource::Image(img) = &mut self.truth {
            fix(&mut img.path);
        }
        if let Some(p) = &mut self.mse_table {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let [lo, hi] = self.eta_range;
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || lo >= hi {
            return Err(bad("eta_range", "need 0 <= eta_min < eta_max"));
        }
        finite_pos("ar.lambda_nominal", self.ar.lambda_nominal)?;
        if !(self.ar.cv.is_finite() && self.ar.cv >= 0.0) {
            return Err(bad("ar.cv", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.ar.a) {
            return Err(bad(
                "ar.a",
                format!("must lie in [0, 1), got {}", self.ar.a),
            ));
        }
        match (self.n, self.sub_dose) {
            (Some(_), Some(_)) => return Err(bad("n", "give either `n` or `sub_dose`, not both")),
            (None, None) => return Err(bad("n", "one of `n` or `sub_dose` is required")),
            (Some(0), _) => return Err(bad("n", "must be >= 1")),
            (None, Some(s)) => finite_pos("sub_dose", s)?,
            _ => {}
        }
        if self.sub_acquisitions() == 0 {
            return Err(bad("sub_dose", "implies n = 0"));
        }
        if self.trials == 0 {
            return Err(bad("trials", "must be >= 1"));
        }
        finite_pos("grid_floor", self.grid_floor)?;
        if self.alternating.max_iterations == 0 {
            return Err(bad("alternating.max_iterations", "must be >= 1"));
        }
        finite_pos(
            "alternating.convergence_tol",
            self.alternating.convergence_tol,
        )?;
        match &self.truth {
            TruthSource::Synthetic(SyntheticTruth { width, height, .. }) => {
                if *width == 0 || *height == 0 {
                    return Err(bad("truth.width", "image sides must be >= 1"));
                }
            }
            TruthSource::Image(img) if img.path.as_os_str().is_empty() => {
                return Err(bad("truth.path", "must not be empty"));
            }
            TruthSource::Image(_) => {}
        }
        match &self.sweep {
            Sweep::None => {}
            Sweep::Epsilon {
                eta,
                lambda,
                n,
                min,
                max,
                points,
            } => {
                finite_pos("sweep.eta", *eta)?;
                finite_pos("sweep.lambda", *lambda)?;
                if *n == 0 {
                    return Err(bad("sweep.n", "must be >= 1"));
                }
                if !(min.is_finite() && max.is_finite()) || *min <= -1.0 || min > max {
                    return Err(bad("sweep.min", "need -1 < min <= max"));
                }
                if *points == 0 || (*points == 1 && min != max) {
                    return Err(bad(
                        "sweep.points",
                        "must be >= 2 for a non-degenerate range",
                    ));
                }
            }
            Sweep::Dose {
                etas,
                lambdas,
                sub_dose,
            } => {
                if etas.is_empty() || lambdas.is_empty() {
                    return Err(bad("sweep.etas", "eta and lambda lists must be non-empty"));
                }
                for &e in etas {
                    finite_pos("sweep.etas", e)?;
                }
                for &l in lambdas {
                    finite_pos("sweep.lambdas", l)?;
                }
                finite_pos("sweep.sub_dose", *sub_dose)?;
                if lambdas.iter().any(|l| (l / sub_dose).round() < 1.0) {
                    return Err(bad("sweep.sub_dose", "every lambda must give n >= 1"));
                }
            }
        }
        if let Some(t) = &self.table {
            let spec = self.table_spec_from(t);
            spec.validate().map_err(|e| bad("table", e.to_string()))?;
        }
        Ok(())
    }

    pub fn sub_acquisitions(&self) -> usize {
        match (self.n, self.sub_dose) {
            (Some(n), _) => n,
            (None, Some(s)) => (self.ar.lambda_nominal / s).round() as usize,
            _ => 0,
        }
    }

    fn table_spec_from(&self, t: &TableConfig) -> MseTableSpec {
        MseTableSpec {
            lambdas: t.lambdas.clone(),
            etas: t.etas.clone(),
            n: self.sub_acquisitions(),
            trials: t.trials,
            seed: self.seed,
            grid_floor: self.grid_floor,
        }
    }

    /// Table settings from the `table` section, or a default grid around `lambda_nominal`.
    pub fn table_spec(&self) -> MseTableSpec {
        match &self.table {
            Some(t) => self.table_spec_from(t),
            None => {
                let [lo, hi] = self.eta_range;
                let etas = (0..12).map(|i| lo + (hi - lo) * i as f64 / 11.0).collect();
                self.table_spec_from(&TableConfig {
                    lambdas: vec![self.ar.lambda_nominal],
                    etas,
                    trials: default_table_trials(),
                })
            }
        }
    }

    pub fn table_path(&self) -> PathBuf {
        self.mse_table
            .clone()
            .unwrap_or_else(|| self.output_dir.join("mse_table.csv"))
    }
}
