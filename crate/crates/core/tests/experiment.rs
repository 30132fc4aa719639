use smartfridge_core::{run_experiment, ExperimentConfig, Verdict};

#[test]
fn default_run_shows_focal_underconfidence() {
    let run = run_experiment(&ExperimentConfig::new(7, 50)).unwrap();
    let s = &run.summary;
    let names: Vec<_> = run.models.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["bce", "focal", "adafocal"]);
    assert_eq!(s.verdict, Verdict::from_models(&s.models));
    assert!(s.verdict.holds, "{:?}", s.verdict);
    assert!(s.temperature.test_ece_reduction >= 0.2);
    assert!(s.temperature.values[0] < 1.0, "sharpening expected for an underconfident model");
    assert!(s.temperature.val_nll_after <= s.temperature.val_nll_before);
    for m in s.models.values() {
        assert_eq!(m.report.n_bins(), 15);
        assert_eq!(m.report.n_samples, s.n_test);
    }
}

#[test]
fn summary_serialisation_is_deterministic() {
    let cfg = ExperimentConfig::new(3, 5);
    let a = serde_json::to_string(&run_experiment(&cfg).unwrap().summary).unwrap();
    let b = serde_json::to_string(&run_experiment(&cfg).unwrap().summary).unwrap();
    assert_eq!(a, b);
}

#[test]
fn temperature_record_round_trips() {
    let run = run_experiment(&ExperimentConfig::new(5, 5)).unwrap();
    let rec = &run.summary.temperature;
    let t = rec.temperature().unwrap();
    assert_eq!(t.values(), rec.values.as_slice());
}
