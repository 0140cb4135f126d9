use beamdrift::acquisition::{acquire_time_resolved, aggregate};
use beamdrift::beam_model::{generate_dose_field, ARParams};
use beamdrift::estimators::{baseline_eta, lambda_reference, AssumedDose};
use beamdrift::harness::synthetic::{synthetic_truth, Pattern};
use beamdrift::metrics::dose_mse;
use beamdrift::rng::{stream, Domain};
use beamdrift::sequential_filter::{
    run_bidirectional, run_filter_pass, select_sigma_eps, Direction, FilterNoiseParams,
};

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

#[test]
fn averaging_both_passes_beats_forward_pass() {
    let ar = ARParams::from_spec(20.0, 0.2, 0.999).unwrap();
    let truth = synthetic_truth(Pattern::Blobs, 96, 96, [1.0, 5.0], 3).unwrap();
    for seed in 0..3 {
        let dose = generate_dose_field(&ar, 96, 96, &mut stream(seed, Domain::Dose, 0)).unwrap();
        let agg = aggregate(&acquire_time_resolved(&truth, &dose, 200, seed).unwrap());
        let eps = select_sigma_eps(&ar, truth.mean(), 20.0, 0.0).unwrap();
        let noise = FilterNoiseParams::new(eps, 0.0).unwrap();
        let fwd = run_filter_pass(&agg, &truth, &ar, &noise, Direction::Forward, 20.0).unwrap();
        let both = run_bidirectional(&agg, &truth, &ar, &noise, 20.0).unwrap();
        let (f, b) = (mse(&fwd, &dose.values), mse(&both, &dose.values));
        assert!(b < f, "seed {seed}: bidirectional {b} vs forward {f}");
    }
}

#[test]
fn filter_with_true_yield_beats_reference_dose() {
    let ar = ARParams::from_spec(20.0, 0.2, 0.999).unwrap();
    let truth = synthetic_truth(Pattern::Gradient, 64, 64, [1.0, 5.0], 0).unwrap();
    let dose = generate_dose_field(&ar, 64, 64, &mut stream(9, Domain::Dose, 0)).unwrap();
    let agg = aggregate(&acquire_time_resolved(&truth, &dose, 200, 9).unwrap());
    let eps = select_sigma_eps(&ar, truth.mean(), 20.0, 0.0).unwrap();
    let filtered = run_bidirectional(
        &agg,
        &truth,
        &ar,
        &FilterNoiseParams::new(eps, 0.0).unwrap(),
        20.0,
    )
    .unwrap();
    let reference = lambda_reference(&agg, &truth).unwrap();
    let (f, _) = dose_mse(&filtered, &dose.values).unwrap();
    let (r, skipped) = dose_mse(&reference.values, &dose.values).unwrap();
    assert_eq!(skipped, 0);
    assert!(f < 0.1 * r, "filter {f} vs reference {r}");
}

#[test]
fn reference_dose_is_unbiased_with_variance_lambda_over_eta_plus_lambda() {
    // y / eta has mean lambda and variance lambda (1 + eta) / eta
    let ar = ARParams::from_spec(20.0, 0.0, 0.5).unwrap();
    let (w, h) = (128, 64);
    let truth = synthetic_truth(Pattern::Checkerboard, w, h, [1.0, 4.0], 0).unwrap();
    let dose = generate_dose_field(&ar, w, h, &mut stream(2, Domain::Dose, 0)).unwrap();
    let agg = aggregate(&acquire_time_resolved(&truth, &dose, 50, 2).unwrap());
    let r = lambda_reference(&agg, &truth).unwrap();
    let want: f64 = truth
        .values
        .iter()
        .map(|&e| 20.0 * (1.0 + e) / e)
        .sum::<f64>()
        / truth.len() as f64;
    let (got, _) = dose_mse(&r.values, &dose.values).unwrap();
    assert!((got / want - 1.0).abs() < 0.06, "{got} vs {want}");
}

#[test]
fn baseline_with_true_dose_has_analytic_mse() {
    let ar = ARParams::from_spec(20.0, 0.0, 0.5).unwrap();
    let (w, h) = (128, 128);
    let truth = synthetic_truth(Pattern::Checkerboard, w, h, [2.0, 5.0], 0).unwrap();
    let dose = generate_dose_field(&ar, w, h, &mut stream(4, Domain::Dose, 0)).unwrap();
    let agg = aggregate(&acquire_time_resolved(&truth, &dose, 20, 4).unwrap());
    let est = baseline_eta(&agg, AssumedDose::Scalar(20.0)).unwrap();
    let sq: Vec<f64> = est
        .values
        .iter()
        .zip(&truth.values)
        .map(|(e, t)| (e - t).powi(2))
        .collect();
    let n = sq.len() as f64;
    let got = sq.iter().sum::<f64>() / n;
    let se = (sq.iter().map(|s| (s - got).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let want = truth
        .values
        .iter()
        .map(|&e| e * (1.0 + e) / 20.0)
        .sum::<f64>()
        / n;
    assert!((got - want).abs() < 3.0 * se, "{got} vs {want} (se {se})");
}
