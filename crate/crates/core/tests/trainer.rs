mod support;

use smartfridge_core::*;
use support::oracles::calibrated_logits;

fn default_data() -> DatasetSplits64 {
    generate_dataset(&DatasetSpec::default()).unwrap()
}

/// Plain softmax cross-entropy gradient descent, written out independently.
fn cross_entropy_reference(data: &DatasetSplits64, epochs: usize, lr: f64) -> Vec<Vec<f64>> {
    let k = data.spec.n_classes();
    let d = data.spec.feature_dim;
    let mut w = vec![vec![0.0; d + 1]; k];
    for _ in 0..epochs {
        let mut g = vec![vec![0.0; d + 1]; k];
        for ex in &data.train {
            let z: Vec<f64> = w
                .iter()
                .map(|row| row[d] + row[..d].iter().zip(&ex.x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..k {
                let delta = e[c] / s - f64::from(u8::from(c == ex.y));
                for (gj, xj) in g[c][..d].iter_mut().zip(&ex.x) {
                    *gj += delta * xj;
                }
                g[c][d] += delta;
            }
        }
        let n = data.train.len() as f64;
        for c in 0..k {
            for j in 0..=d {
                w[c][j] -= lr * g[c][j] / n;
            }
        }
    }
    w
}

#[test]
fn focal_gamma_zero_trains_like_cross_entropy() {
    let spec = DatasetSpec {
        n_train: 500,
        n_val: 100,
        n_test: 100,
        ..DatasetSpec::default()
    };
    let data = generate_dataset(&spec).unwrap();
    let model = train(&data, &LossConfig64::focal(0.0), 20, 0.1).unwrap();
    let reference = cross_entropy_reference(&data, 20, 0.1);
    for (row, ref_row) in model.weights.iter().zip(&reference) {
        for (a, b) in row.iter().zip(ref_row) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn training_is_bit_for_bit_deterministic() {
    let data = default_data();
    for cfg in [LossConfig64::bce(), LossConfig64::adafocal()] {
        let a = train(&data, &cfg, 10, 0.1).unwrap();
        let b = train(&data, &cfg, 10, 0.1).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

#[test]
fn bce_training_loss_mostly_decreases() {
    let model = train(&default_data(), &LossConfig64::bce(), 50, 0.1).unwrap();
    assert_eq!(model.curves.len(), 50);
    let decreasing = model
        .curves
        .windows(2)
        .filter(|w| w[1].train_loss < w[0].train_loss)
        .count();
    assert!(decreasing as f64 >= 0.9 * 49.0, "{decreasing}/49");
}

#[test]
fn adafocal_gammas_stay_clamped_every_epoch() {
    let model = train(&default_data(), &LossConfig64::adafocal(), 50, 0.1).unwrap();
    for rec in &model.curves {
        let gammas = rec.gammas.as_ref().expect("adafocal records gammas");
        assert_eq!(gammas.len(), 15);
        assert!(gammas.iter().all(|g| (0.0..=20.0).contains(g)), "{rec:?}");
    }
}

#[test]
fn identical_classes_give_chance_accuracy() {
    let spec = DatasetSpec {
        class_names: vec!["a".into(), "b".into()],
        class_priors: vec![0.5, 0.5],
        feature_dim: 4,
        class_means: vec![vec![1.0; 4], vec![1.0; 4]],
        noise_sigma: 1.0,
        n_train: 2000,
        n_val: 500,
        n_test: 4000,
        seed: 3,
    };
    let data = generate_dataset(&spec).unwrap();
    let model = train(&data, &LossConfig64::focal(2.0), 50, 0.1).unwrap();
    let eval = evaluate(&model, &data.test, None).unwrap();
    assert!((eval.accuracy - 0.5).abs() <= 0.05, "{}", eval.accuracy);
}

fn separated_spec(distance: f64) -> DatasetSpec {
    // Two classes on opposite sides of the origin along the first axis.
    DatasetSpec {
        class_names: vec!["a".into(), "b".into()],
        class_priors: vec![0.7, 0.3],
        feature_dim: 2,
        class_means: vec![vec![-distance / 2.0, 0.0], vec![distance / 2.0, 0.0]],
        noise_sigma: 1.0,
        n_train: 2000,
        n_val: 500,
        n_test: 2000,
        seed: 5,
    }
}

#[test]
fn well_separated_classes_are_learned() {
    // At 6 sigma the Bayes error is Phi(-3) ~ 0.13%.
    let data = generate_dataset(&separated_spec(6.0)).unwrap();
    let model = train(&data, &LossConfig64::bce(), 50, 0.1).unwrap();
    let eval = evaluate(&model, &data.test, None).unwrap();
    assert!(eval.accuracy >= 0.95, "{}", eval.accuracy);
}

#[test]
fn converged_model_on_separable_data_is_calibrated() {
    let data = generate_dataset(&separated_spec(12.0)).unwrap();
    let model = train(&data, &LossConfig64::focal(0.0), 500, 1.0).unwrap();
    let eval = evaluate(&model, &data.test, None).unwrap();
    assert!(eval.accuracy > 0.999);
    assert!(eval.report.ece <= 0.05, "{}", eval.report.ece);
}

#[test]
fn evaluation_is_pure() {
    let data = default_data();
    let model = train(&data, &LossConfig64::focal(2.0), 5, 0.1).unwrap();
    let a = evaluate(&model, &data.test, None).unwrap();
    let b = evaluate(&model, &data.test, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.logits.len(), data.test.len());
}

#[test]
fn focal_models_are_underconfident_and_bce_is_closer() {
    let data = default_data();
    let gap = |cfg: LossConfig64| {
        let model = train(&data, &cfg, 50, 0.1).unwrap();
        evaluate(&model, &data.test, None).unwrap().confidence_gap()
    };
    let bce = gap(LossConfig64::bce());
    let focal = gap(LossConfig64::focal(2.0));
    let ada = gap(LossConfig64::adafocal());
    assert!(focal < 0.0, "focal gap {focal}");
    assert!(ada < 0.0, "adafocal gap {ada}");
    assert!(bce.abs() < focal.abs(), "bce {bce} focal {focal}");
}

#[test]
fn temperature_scaling_improves_focal_calibration() {
    let data = default_data();
    let model = train(&data, &LossConfig64::focal(2.0), 50, 0.1).unwrap();
    let val = evaluate(&model, &data.val, None).unwrap();
    let t = fit_temperature(&val.logits, &val.labels, TemperatureMode::Scalar).unwrap();
    let before = evaluate(&model, &data.test, None).unwrap().report.ece;
    let after = evaluate(&model, &data.test, Some(&t)).unwrap().report.ece;
    assert!(after <= 0.8 * before, "before {before} after {after}");
}

#[test]
fn generic_over_f32() {
    let spec = DatasetSpec {
        n_train: 400,
        n_val: 200,
        n_test: 200,
        ..DatasetSpec::default()
    };
    let data = generate_dataset::<f32>(&spec).unwrap();
    let model = train(&data, &LossConfig::<f32>::focal(2.0), 20, 0.1).unwrap();
    let eval = evaluate(&model, &data.test, None).unwrap();
    assert!(eval.accuracy > 0.6);
    let (logits, labels) = calibrated_logits(500, 3, 2.0, 2.0, 1);
    let logits32: Vec<LogitVector<f32>> = logits
        .iter()
        .map(|z| LogitVector::from_f64(z.values()).unwrap())
        .collect();
    let t = fit_temperature(&logits32, &labels, TemperatureMode::Scalar).unwrap();
    assert!((t.values()[0] - 2.0).abs() < 0.5);
}
