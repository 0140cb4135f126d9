//! Experiment driver behind the command-line tool.
//!
//! Every command is a pure function of the configuration and seed; outputs
//! are written in a fixed order with round-trip float formatting.

pub mod config;
pub mod synthetic;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::acquisition::{acquire_time_resolved, aggregate, TRMeasurement};
use crate::alternating::{run_alternating, AlternatingConfig, AlternatingResult, DiagnosticTruth};
use crate::beam_model::{generate_dose_field, ARParams, DoseField};
use crate::dft_nulling::{default_bounds, ft_nulling, tune_nulling, NullingParams};
use crate::error::Error;
use crate::estimators::{
    baseline_eta, lambda_reference, lqm_eta, oracle_eta, qm_eta, trml_eta, AssumedDose, EtaGrid,
};
use crate::grid::YieldImage;
use crate::io;
use crate::metrics::{dose_mse, image_mse, pointwise_bias_variance, EstimatorReport};
use crate::rng::{stream, Domain};
use crate::sequential_filter::{build_mse_table, simulate_trials, MseTable};

use config::{EstimatorKind, ExperimentConfig, Sweep, TruthSource};
use synthetic::{remap, synthetic_truth};

/// Failure classes with distinct process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error(transparent)]
    Core(Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::MissingArtifact(_) => 3,
            HarnessError::Core(_) => 1,
        }
    }

    pub(crate) fn from_core(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. } => HarnessError::Config(e.to_string()),
            Error::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                HarnessError::MissingArtifact(e.to_string())
            }
            other => HarnessError::Core(other),
        }
    }
}

impl From<Error> for HarnessError {
    fn from(e: Error) -> Self {
        HarnessError::from_core(e)
    }
}

pub type HResult<T> = std::result::Result<T, HarnessError>;

/// Written next to every command's artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub parameters: serde_json::Value,
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<serde_json::Value>,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> HResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn text(&mut self, name: &str, body: &str) -> HResult<()> {
        io::write_text(&self.dir.join(name), body)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn bytes(&mut self, name: &str, body: &[u8]) -> HResult<()> {
        io::write_bytes(&self.dir.join(name), body)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(
        mut self,
        command: &str,
        cfg: &ExperimentConfig,
        source: Option<serde_json::Value>,
    ) -> HResult<Manifest> {
        let manifest = Manifest {
            command: command.to_string(),
            seed: cfg.seed,
            parameters: serde_json::to_value(cfg).expect("config serializes"),
            files: std::mem::take(&mut self.files),
            source,
        };
        let name = format!("manifest_{}.json", command.replace('-', "_"));
        let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        io::write_text(&self.dir.join(name), &body)?;
        Ok(manifest)
    }
}

pub fn build_truth(cfg: &ExperimentConfig) -> HResult<YieldImage> {
    match &cfg.truth {
        TruthSource::Synthetic(s) => Ok(synthetic_truth(
            s.pattern,
            s.width,
            s.height,
            cfg.eta_range,
            s.pattern_seed,
        )?),
        TruthSource::Image(img) => {
            if !img.path.exists() {
                return Err(HarnessError::MissingArtifact(format!(
                    "truth image {} does not exist",
                    img.path.display()
                )));
            }
            let (w, h, raw) = io::read_gray_image(&img.path)?;
            Ok(YieldImage::new(
                w,
                h,
                remap(&raw, cfg.eta_range[0], cfg.eta_range[1]),
            )?)
        }
    }
}

/// Ground truth, realised dose and measurement for one configuration.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub truth: YieldImage,
    pub dose: DoseField,
    pub measurement: TRMeasurement,
}

pub fn simulate(cfg: &ExperimentConfig) -> HResult<Simulation> {
    let ar = cfg.ar.params()?;
    let truth = build_truth(cfg)?;
    let dose = generate_dose_field(
        &ar,
        truth.width,
        truth.height,
        &mut stream(cfg.seed, Domain::Dose, 0),
    )?;
    let measurement = acquire_time_resolved(&truth, &dose, cfg.sub_acquisitions(), cfg.seed)?;
    Ok(Simulation {
        truth,
        dose,
        measurement,
    })
}

pub fn cmd_simulate(cfg: &ExperimentConfig) -> HResult<Manifest> {
    let sim = simulate(cfg)?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    let (w, h) = sim.truth.dims();
    out.text("dose.csv", &io::dose_field_to_csv(&sim.dose))?;
    out.text("measurement.csv", &io::measurement_to_csv(&sim.measurement))?;
    out.text("truth.csv", &io::yield_to_csv(&sim.truth))?;
    out.bytes("truth.pgm", &io::pgm16_bytes(w, h, &sim.truth.values))?;
    out.bytes(
        "aggregate.pgm",
        &io::counts_pgm16_bytes(w, h, &aggregate(&sim.measurement).totals),
    )?;
    out.finish("simulate", cfg, None)
}

/// Per-estimator outputs of one estimation run.
#[derive(Debug, Clone)]
pub struct Estimates {
    pub report: EstimatorReport,
    pub images: Vec<(String, YieldImage)>,
    pub traces: Vec<(String, Vec<f64>)>,
    pub alternating: Vec<(String, AlternatingResult)>,
    pub nulling: Option<(NullingParams, f64)>,
}

fn load_table(cfg: &ExperimentConfig) -> HResult<MseTable> {
    let path = cfg.table_path();
    if !path.exists() {
        return Err(HarnessError::MissingArtifact(format!(
            "MSE table {} not found; run `beamdrift table --config <config>` first",
            path.display()
        )));
    }
    Ok(MseTable::read(&path)?)
}

/// Runs the configured estimators against known truth and dose.
///
/// `filter_ar` drives the alternating estimator; the dose is only read for
/// the oracle and for scoring.
pub fn run_estimators(
    cfg: &ExperimentConfig,
    kinds: &[EstimatorKind],
    truth: &YieldImage,
    dose: &DoseField,
    tr: &TRMeasurement,
    filter_ar: &ARParams,
) -> HResult<Estimates> {
    let lambda_nominal = cfg.ar.lambda_nominal;
    let agg = aggregate(tr);
    let qm = qm_eta(tr);
    let grid = EtaGrid::from_qm(&qm.values, cfg.grid_floor)?;
    let wants = |k: EstimatorKind| kinds.contains(&k);
    let needs_table = wants(EstimatorKind::Alt) || wants(EstimatorKind::AltOffset);
    let table = if needs_table {
        Some(load_table(cfg)?)
    } else {
        None
    };

    let mut entries: Vec<(String, Option<f64>, Option<f64>)> = Vec::new();
    let mut images = Vec::new();
    let mut traces = Vec::new();
    let mut alternating = Vec::new();
    let mut nulling = None;
    let mut baseline: Option<YieldImage> = None;

    let mut ordered: Vec<EstimatorKind> = kinds.to_vec();
    ordered.sort();
    ordered.dedup();
    for kind in ordered {
        let name = kind.name().to_string();
        match kind {
            EstimatorKind::Baseline
            | EstimatorKind::Qm
            | EstimatorKind::Lqm
            | EstimatorKind::Trml
            | EstimatorKind::Oracle
            | EstimatorKind::Ft => {
                let est = match kind {
                    EstimatorKind::Baseline => {
                        baseline_eta(&agg, AssumedDose::Scalar(lambda_nominal))?
                    }
                    EstimatorKind::Qm => qm.clone(),
                    EstimatorKind::Lqm => lqm_eta(tr),
                    EstimatorKind::Trml => {
                        trml_eta(tr, AssumedDose::Scalar(lambda_nominal), &grid)?
                    }
                    EstimatorKind::Oracle => oracle_eta(tr, dose, &grid)?,
                    _ => {
                        let base = match &baseline {
                            Some(b) => b.clone(),
                            None => baseline_eta(&agg, AssumedDose::Scalar(lambda_nominal))?,
                        };
                        let (dw, dh) = default_bounds(truth.width, truth.height);
                        let params = tune_nulling(
                            &base,
                            truth,
                            cfg.nulling.w_max.unwrap_or(dw),
                            cfg.nulling.h_max.unwrap_or(dh),
                        )?;
                        nulling = Some(params);
                        ft_nulling(&base, params.0)?
                    }
                };
                if kind == EstimatorKind::Baseline {
                    baseline = Some(est.clone());
                }
                entries.push((name.clone(), Some(image_mse(&est, truth)?), None));
                images.push((name, est));
            }
            EstimatorKind::Alt | EstimatorKind::AltOffset => {
                let lambda_init = if kind == EstimatorKind::Alt {
                    lambda_nominal
                } else {
                    lambda_nominal - 2.0 * cfg.ar.cv * lambda_nominal
                };
                if !(lambda_init > 0.0) {
                    return Err(HarnessError::Config(format!(
                        "field `ar.cv`: offset initialisation {lambda_init} is not positive"
                    )));
                }
                let acfg = AlternatingConfig {
                    max_iterations: cfg.alternating.max_iterations,
                    convergence_tol: cfg.alternating.convergence_tol,
                    ..AlternatingConfig::new(lambda_init, grid, table.as_ref().expect("loaded"))
                };
                let res = run_alternating(
                    tr,
                    filter_ar,
                    &acfg,
                    Some(DiagnosticTruth {
                        eta: truth,
                        dose: &dose.values,
                    }),
                )?;
                entries.push((
                    name.clone(),
                    Some(image_mse(&res.eta_final, truth)?),
                    Some(dose_mse(&res.lambda_final, &dose.values)?.0),
                ));
                images.push((name.clone(), res.eta_final.clone()));
                traces.push((name.clone(), res.lambda_final.clone()));
                alternating.push((name, res));
            }
            EstimatorKind::LambdaReference => {
                let r = lambda_reference(&agg, truth)?;
                entries.push((
                    name.clone(),
                    None,
                    Some(dose_mse(&r.values, &dose.values)?.0),
                ));
                traces.push((name, r.values));
            }
        }
    }
    Ok(Estimates {
        report: EstimatorReport::from_entries(&entries),
        images,
        traces,
        alternating,
        nulling,
    })
}

fn write_estimates(out: &mut Outputs, prefix: &str, est: &Estimates) -> HResult<()> {
    for (name, img) in &est.images {
        out.text(&format!("{prefix}eta_{name}.csv"), &io::yield_to_csv(img))?;
        out.bytes(
            &format!("{prefix}eta_{name}.pgm"),
            &io::pgm16_bytes(img.width, img.height, &img.values),
        )?;
    }
    for (name, trace) in &est.traces {
        out.text(
            &format!("{prefix}lambda_{name}.csv"),
            &io::trace_to_csv("lambda", trace),
        )?;
    }
    for (name, res) in &est.alternating {
        out.text(
            &format!("{prefix}diagnostics_{name}.csv"),
            &res.diagnostics_csv(),
        )?;
    }
    if let Some((p, mse)) = est.nulling {
        out.text(
            &format!("{prefix}nulling.csv"),
            &format!("w,h,mse\n{},{},{mse:?}\n", p.w, p.h),
        )?;
    }
    out.text(&format!("{prefix}report.csv"), &est.report.to_csv())?;
    out.text(&format!("{prefix}report.txt"), &est.report.to_table())?;
    Ok(())
}

fn require(path: &Path) -> HResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(HarnessError::MissingArtifact(format!(
            "{} not found; run `beamdrift simulate` first",
            path.display()
        )))
    }
}

/// Estimates from simulated artifacts; `dose.csv` and `truth.csv` must sit
/// next to the measurement file.
pub fn cmd_estimate(cfg: &ExperimentConfig, measurement: &Path) -> HResult<EstimatorReport> {
    require(measurement)?;
    let dir = measurement.parent().unwrap_or(Path::new("."));
    let (dose_path, truth_path) = (dir.join("dose.csv"), dir.join("truth.csv"));
    require(&dose_path)?;
    require(&truth_path)?;
    let tr = io::read_measurement(measurement)?;
    let dose = io::read_dose_field(&dose_path)?;
    let truth = io::read_yield_csv(&truth_path)?;

    let source = std::fs::read_to_string(dir.join("manifest_simulate.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|v| v.get("parameters").cloned());

    let ar = cfg.ar.params()?;
    let est = run_estimators(cfg, &cfg.estimators, &truth, &dose, &tr, &ar)?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    write_estimates(&mut out, "", &est)?;
    out.finish("estimate", cfg, source)?;
    Ok(est.report)
}

/// Alternating estimation with the filter built around `assumed_a`.
pub fn cmd_wrong_a(cfg: &ExperimentConfig, assumed_a: f64) -> HResult<EstimatorReport> {
    if !(0.0..1.0).contains(&assumed_a) {
        return Err(HarnessError::Config(format!(
            "field `assumed_a`: must lie in [0, 1), got {assumed_a}"
        )));
    }
    let sim = simulate(cfg)?;
    let true_ar = cfg.ar.params()?;
    let filter_ar = if assumed_a == true_ar.a {
        true_ar
    } else {
        true_ar.with_correlation(assumed_a)?
    };
    let kinds = [
        EstimatorKind::Baseline,
        EstimatorKind::Trml,
        EstimatorKind::Oracle,
        EstimatorKind::Alt,
        EstimatorKind::LambdaReference,
    ];
    let est = run_estimators(
        cfg,
        &kinds,
        &sim.truth,
        &sim.dose,
        &sim.measurement,
        &filter_ar,
    )?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    write_estimates(&mut out, &format!("wrong_a_{assumed_a}_"), &est)?;
    out.finish(&format!("wrong-a_{assumed_a}"), cfg, None)?;
    Ok(est.report)
}

pub fn cmd_table(cfg: &ExperimentConfig) -> HResult<MseTable> {
    let table = build_mse_table(&cfg.table_spec())?;
    let path = cfg.table_path();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    table.write(&path)?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    out.files.push(path.display().to_string());
    out.finish("table", cfg, None)?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// Relative dose error for epsilon sweeps, 0 for dose sweeps.
    pub epsilon: f64,
    pub eta: f64,
    pub lambda: f64,
    pub n: usize,
    pub estimator: String,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    pub mse_std_err: f64,
}

const SWEEP_ESTIMATORS: [EstimatorKind; 4] = [
    EstimatorKind::Baseline,
    EstimatorKind::Qm,
    EstimatorKind::Lqm,
    EstimatorKind::Trml,
];

fn sweep_kinds(cfg: &ExperimentConfig) -> Vec<EstimatorKind> {
    SWEEP_ESTIMATORS
        .into_iter()
        .filter(|k| cfg.estimators.contains(k))
        .collect()
}

/// Scores single-pixel trials drawn at `(eta, lambda)` with assumed dose `assumed`.
#[allow(clippy::too_many_arguments)]
fn score_trials(
    cfg: &ExperimentConfig,
    kinds: &[EstimatorKind],
    eta: f64,
    lambda: f64,
    assumed: f64,
    n: usize,
    block: u64,
    epsilon: f64,
) -> HResult<Vec<SweepRow>> {
    let tr = simulate_trials(eta, lambda, n, cfg.trials, cfg.seed, Domain::Trials, block)?;
    let mut rows = Vec::new();
    let qm = qm_eta(&tr);
    for &kind in kinds {
        let est = match kind {
            EstimatorKind::Baseline => baseline_eta(&aggregate(&tr), AssumedDose::Scalar(assumed))?,
            EstimatorKind::Qm => qm.clone(),
            EstimatorKind::Lqm => lqm_eta(&tr),
            EstimatorKind::Trml => {
                let grid = EtaGrid::from_qm(&qm.values, cfg.grid_floor)?;
                trml_eta(&tr, AssumedDose::Scalar(assumed), &grid)?
            }
            _ => unreachable!("filtered by sweep_kinds"),
        };
        let stats = if est.values.len() >= 2 {
            pointwise_bias_variance(&est.values, eta)?
        } else {
            crate::metrics::BiasVariance {
                bias: est.values[0] - eta,
                variance: 0.0,
                mse: (est.values[0] - eta).powi(2),
            }
        };
        let t = est.values.len() as f64;
        let sq_var = est
            .values
            .iter()
            .map(|v| ((v - eta).powi(2) - stats.mse).powi(2))
            .sum::<f64>()
            / (t - 1.0).max(1.0);
        rows.push(SweepRow {
            epsilon,
            eta,
            lambda,
            n,
            estimator: kind.name().to_string(),
            bias: stats.bias,
            variance: stats.variance,
            mse: stats.mse,
            mse_std_err: (sq_var / t).sqrt(),
        });
    }
    Ok(rows)
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("epsilon,eta,lambda,n,estimator,bias,variance,mse,mse_std_err\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:?},{:?},{:?},{},{},{:?},{:?},{:?},{:?}",
            r.epsilon, r.eta, r.lambda, r.n, r.estimator, r.bias, r.variance, r.mse, r.mse_std_err
        );
    }
    out
}

/// Monte Carlo sweep over the relative dose error. Each point draws fresh data.
pub fn sweep_epsilon(cfg: &ExperimentConfig) -> HResult<Vec<SweepRow>> {
    let Sweep::Epsilon {
        eta,
        lambda,
        n,
        min,
        max,
        points,
    } = cfg.sweep
    else {
        return Err(HarnessError::Config(
            "field `sweep`: sweep-epsilon needs {\"kind\": \"epsilon\", ...}".into(),
        ));
    };
    let kinds = sweep_kinds(cfg);
    let mut rows = Vec::new();
    for i in 0..points {
        let eps = if points == 1 {
            min
        } else {
            min + (max - min) * i as f64 / (points - 1) as f64
        };
        rows.extend(score_trials(
            cfg,
            &kinds,
            eta,
            lambda,
            lambda * (1.0 + eps),
            n,
            i as u64,
            eps,
        )?);
    }
    Ok(rows)
}

/// Monte Carlo sweep over total dose at fixed dose per sub-acquisition.
pub fn sweep_dose(cfg: &ExperimentConfig) -> HResult<Vec<SweepRow>> {
    let Sweep::Dose {
        ref etas,
        ref lambdas,
        sub_dose,
    } = cfg.sweep
    else {
        return Err(HarnessError::Config(
            "field `sweep`: sweep-dose needs {\"kind\": \"dose\", ...}".into(),
        ));
    };
    let kinds = sweep_kinds(cfg);
    let mut rows = Vec::new();
    for (ei, &eta) in etas.iter().enumerate() {
        for (li, &lambda) in lambdas.iter().enumerate() {
            let n = (lambda / sub_dose).round() as usize;
            let block = (1 << 20) + (ei * lambdas.len() + li) as u64;
            rows.extend(score_trials(
                cfg, &kinds, eta, lambda, lambda, n, block, 0.0,
            )?);
        }
    }
    Ok(rows)
}

pub fn cmd_sweep_epsilon(cfg: &ExperimentConfig) -> HResult<Vec<SweepRow>> {
    let rows = sweep_epsilon(cfg)?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    out.text("sweep_epsilon.csv", &sweep_csv(&rows))?;
    out.finish("sweep-epsilon", cfg, None)?;
    Ok(rows)
}

pub fn cmd_sweep_dose(cfg: &ExperimentConfig) -> HResult<Vec<SweepRow>> {
    let rows = sweep_dose(cfg)?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    out.text("sweep_dose.csv", &sweep_csv(&rows))?;
    out.finish("sweep-dose", cfg, None)?;
    Ok(rows)
}
