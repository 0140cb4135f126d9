use std::path::Path;

use beamdrift::harness::config::ExperimentConfig;
use beamdrift::harness::{self, HarnessError};
use proptest::prelude::*;
use serde_json::{json, Value};

fn small(out: &Path, extra: Value) -> ExperimentConfig {
    let mut v = json!({
        "truth": {"pattern": "blobs", "width": 20, "height": 12},
        "eta_range": [1, 5],
        "ar": {"lambda_nominal": 20, "cv": 0.2, "a": 0.99},
        "sub_dose": 0.1,
        "seed": 5,
        "table": {"lambdas": [20], "etas": [1, 3, 5], "trials": 1000},
        "output_dir": out,
    });
    for (k, x) in extra.as_object().unwrap() {
        v[k] = x.clone();
    }
    ExperimentConfig::from_json(&v.to_string()).unwrap()
}

#[test]
fn constant_dose_is_written_as_nominal_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(
        dir.path(),
        json!({"ar": {"lambda_nominal": 20, "cv": 0.0, "a": 0.9}}),
    );
    harness::cmd_simulate(&cfg).unwrap();
    let text = std::fs::read_to_string(dir.path().join("dose.csv")).unwrap();
    let values: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(values.len(), 240);
    assert!(values.iter().all(|v| *v == "20.0"));
}

#[test]
fn estimate_needs_table_for_alt() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), json!({}));
    harness::cmd_simulate(&cfg).unwrap();
    let err = harness::cmd_estimate(&cfg, &dir.path().join("measurement.csv")).unwrap_err();
    assert!(
        matches!(err, HarnessError::MissingArtifact(ref m) if m.contains("beamdrift table")),
        "{err}"
    );
    assert_eq!(err.exit_code(), 3);

    let err = harness::cmd_estimate(&cfg, &dir.path().join("absent.csv")).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn estimate_echoes_simulation_parameters_and_reports_excess() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), json!({}));
    harness::cmd_simulate(&cfg).unwrap();
    harness::cmd_table(&cfg).unwrap();
    let report = harness::cmd_estimate(&cfg, &dir.path().join("measurement.csv")).unwrap();

    let read = |name: &str| -> Value {
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(name)).unwrap()).unwrap()
    };
    let sim = read("manifest_simulate.json");
    let est = read("manifest_estimate.json");
    assert_eq!(sim["parameters"], est["source"]);
    assert_eq!(est["parameters"], sim["parameters"]);

    let alt = report.row("alt").unwrap();
    assert!(alt.excess.is_some() && alt.excess_percent.is_some() && alt.mse_lambda.is_some());
    assert_eq!(report.row("oracle").unwrap().excess, Some(0.0));
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("estimator,mse_eta,excess_mse,excess_percent,mse_lambda\n"));
}

#[test]
fn wrong_a_at_true_value_matches_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), json!({}));
    harness::cmd_simulate(&cfg).unwrap();
    harness::cmd_table(&cfg).unwrap();
    let est = harness::cmd_estimate(&cfg, &dir.path().join("measurement.csv")).unwrap();
    let wrong = harness::cmd_wrong_a(&cfg, 0.99).unwrap();
    assert_eq!(est.row("alt"), wrong.row("alt"));
    assert_eq!(
        std::fs::read(dir.path().join("lambda_alt.csv")).unwrap(),
        std::fs::read(dir.path().join("wrong_a_0.99_lambda_alt.csv")).unwrap()
    );
    assert_eq!(harness::cmd_wrong_a(&cfg, 1.0).unwrap_err().exit_code(), 2);
}

#[test]
fn sweeps_reject_missing_axis() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), json!({}));
    assert_eq!(harness::sweep_epsilon(&cfg).unwrap_err().exit_code(), 2);
    assert_eq!(harness::sweep_dose(&cfg).unwrap_err().exit_code(), 2);
}

#[test]
fn image_truth_is_remapped() {
    let dir = tempfile::tempdir().unwrap();
    let pgm = dir.path().join("t.pgm");
    let mut bytes = b"P5\n3 2\n255\n".to_vec();
    bytes.extend_from_slice(&[0, 51, 255, 102, 153, 204]);
    std::fs::write(&pgm, bytes).unwrap();
    let cfg = small(dir.path(), json!({"truth": {"path": pgm}}));
    let truth = harness::build_truth(&cfg).unwrap();
    assert_eq!(truth.dims(), (3, 2));
    assert!((truth.values[0] - 1.0).abs() < 1e-12 && (truth.values[2] - 5.0).abs() < 1e-12);
    assert!((truth.values[1] - 1.8).abs() < 1e-9);

    let missing = small(
        dir.path(),
        json!({"truth": {"path": dir.path().join("nope.png")}}),
    );
    assert_eq!(harness::build_truth(&missing).unwrap_err().exit_code(), 3);
}

fn leaf() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::from),
        any::<i64>().prop_map(Value::from),
        any::<f64>()
            .prop_map(|f| serde_json::Number::from_f64(f).map_or(Value::Null, Value::Number)),
        (-2.0f64..3.0).prop_map(Value::from),
        "[a-z_]{0,8}".prop_map(Value::from),
    ]
}

const FIELDS: &[&str] = &[
    "truth",
    "eta_range",
    "ar",
    "n",
    "sub_dose",
    "estimators",
    "sweep",
    "trials",
    "seed",
    "output_dir",
    "table",
    "grid_floor",
    "alternating",
    "nulling",
    "bogus",
];

proptest! {
    #[test]
    fn mutated_configs_never_panic(
        field in proptest::sample::select(FIELDS),
        replacement in leaf(),
        nested in proptest::option::of(("[a-z_]{1,12}", leaf())),
    ) {
        let mut v = json!({
            "truth": {"pattern": "blobs"},
            "eta_range": [1, 5],
            "ar": {"lambda_nominal": 20, "cv": 0.2, "a": 0.999},
            "sub_dose": 0.1,
            "output_dir": "out",
        });
        match nested {
            Some((key, x)) if v[field].is_object() => { v[field][key] = x; }
            _ => { v[field] = replacement; }
        }
        match ExperimentConfig::from_json(&v.to_string()) {
            Ok(cfg) => prop_assert!(cfg.validate().is_ok()),
            Err(HarnessError::Config(msg)) => prop_assert!(!msg.is_empty()),
            Err(other) => prop_assert!(false, "unexpected error class: {other}"),
        }
    }

    #[test]
    fn arbitrary_text_never_panics(text in ".{0,200}") {
        prop_assert!(matches!(ExperimentConfig::from_json(&text), Err(HarnessError::Config(_))));
    }
}
