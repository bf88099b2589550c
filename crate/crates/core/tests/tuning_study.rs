use hetqr::estimator::{Estimator, Method};
use hetqr::model::QuantileGrid;
use hetqr::simgen::{rng_from_seed, sample, ScenarioKind};
use hetqr::study::{run_study, StudyConfig};
use hetqr::tuning::{tune_cv, tune_validation, LambdaGrid};

fn levels() -> QuantileGrid {
    QuantileGrid::new(vec![0.25, 0.5, 0.75]).unwrap()
}

#[test]
fn cv_and_validation_agree_at_zero_lambda() {
    let mut rng = rng_from_seed(21);
    let train = sample(ScenarioKind::HeteroScale6, 500, &mut rng).unwrap();
    let valid = sample(ScenarioKind::HeteroScale6, 5000, &mut rng).unwrap();
    let grid = levels();
    let zero = LambdaGrid::new(vec![0.0]).unwrap();
    let est = Estimator::new(Method::HetQr);
    let cv = tune_cv(&train, &grid, &zero, 3, 1, &est).unwrap();
    let holdout = tune_validation(&train, &valid, &grid, &zero, &est).unwrap();
    // Both scores are summed check losses; compare them per observation.
    let a = cv.scores[0] / train.n() as f64;
    let b = holdout.scores[0] / valid.n() as f64;
    assert!((a - b).abs() / b < 0.10, "cv {a} vs validation {b}");
}

#[test]
fn selected_lambda_beats_unpenalized_on_validation() {
    let mut rng = rng_from_seed(22);
    let train = sample(ScenarioKind::HeteroScale6, 500, &mut rng).unwrap();
    let valid = sample(ScenarioKind::HeteroScale6, 5000, &mut rng).unwrap();
    let mut values = LambdaGrid::default_for(500).values().to_vec();
    values.push(0.0);
    let lambdas = LambdaGrid::new(values).unwrap();
    let result = tune_validation(
        &train,
        &valid,
        &levels(),
        &lambdas,
        &Estimator::new(Method::HetQr),
    )
    .unwrap();
    assert_eq!(result.lambdas[0], 0.0);
    assert!(result.scores[result.best_index] <= result.scores[0]);
    assert!(lambdas.values().contains(&result.best_lambda));
    assert!(result.scores.iter().all(|&s| s >= 0.0));
}

#[test]
fn study_of_every_method_on_the_small_design() {
    let mut config = StudyConfig::new(ScenarioKind::HeteroScale6, 100, 3, 9, Method::ALL.to_vec());
    config.test_factor = 20;
    let report = run_study(&config).unwrap();
    assert_eq!(report.failure_count(), 0);
    assert_eq!(report.rows.len(), 4);
    for row in &report.rows {
        assert_eq!(row.successes, 3);
        assert!(row.fm.mean >= 0.0 && row.fm.mean <= 1.0);
        assert!(row.pe.mean > 0.0 && row.pee.mean > 0.0 && row.qpe.mean > 0.0);
    }
    let qr = report.rows.iter().find(|r| r.method == Method::Qr).unwrap();
    assert_eq!(qr.model_size.mean, 18.0);
    let text = report.to_text();
    for label in [
        "QR",
        "QR-LASSO",
        "QR-aLASSO",
        "Het-QR",
        "Model-size",
        "FM (%)",
    ] {
        assert!(text.contains(label), "{label} missing from\n{text}");
    }
}
