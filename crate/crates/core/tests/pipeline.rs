use g2fit_core::bench::{benchmark_histogram, fitting_spec};
use g2fit_core::fixtures;
use g2fit_core::io::{digest, format_histogram, FitReportFile, ReportContext};
use g2fit_core::{
    multistart_maximize, FitProblem, GuessStrategy, Lambda, MultiStartPlan, ObjectiveConfig, OptimizerSettings,
};
use proptest::prelude::*;

fn thermal_report(theta_jitter: f64) -> FitReportFile {
    let fx = fixtures::thermal();
    let t = fx.time_scale_for_budget(1500.0);
    let hist = benchmark_histogram(&fx, t, 5).unwrap();
    let spec = fitting_spec(&fx, &hist, &[]).unwrap();
    let problem = FitProblem::new(spec.clone(), hist.clone(), ObjectiveConfig::mle()).unwrap();
    let plan = MultiStartPlan {
        restarts: 6,
        seed: 2,
        ..Default::default()
    };
    let mut fit = multistart_maximize(&problem, &plan, &OptimizerSettings::default()).unwrap();
    fit.theta_hat.iter_mut().for_each(|v| *v *= 1.0 + theta_jitter);
    fit.objective_value += theta_jitter;
    FitReportFile::from_fit(
        &fit,
        ReportContext {
            spec: &spec,
            hist: &hist,
            lambda: Lambda::Scalar(0.0),
            weights: vec![0.0; spec.regularized_indices().len()],
            seed: 2,
            restarts: 6,
            guess_strategy: GuessStrategy::UniformInBounds,
            settings: OptimizerSettings::default(),
            input_digest: digest(format_histogram(&hist).as_bytes()),
            input_file: Some("h.csv".into()),
            record_wall_time: false,
        },
    )
    .unwrap()
}

#[test]
fn fit_recovers_thermal_fixture() {
    let r = thermal_report(0.0);
    let theta = r.theta().unwrap();
    let fx = fixtures::thermal();
    let truth = fx.theta_at(fx.time_scale_for_budget(1500.0));
    // width of the bunching peak
    assert!((theta[2] - truth[2]).abs() / truth[2] < 0.35, "{theta:?} vs {truth:?}");
    assert_eq!(r.metrics.photons_per_bin, r.metrics.total_photons as f64 / 256.0);
    assert!(r.restarts.top.len() <= 5);
    assert!(r.restarts.top.windows(2).all(|w| w[0].value >= w[1].value));
}

#[test]
fn report_round_trip_is_byte_identical() {
    let r = thermal_report(0.0);
    let text = r.to_json().unwrap();
    let back = FitReportFile::from_json(&text).unwrap();
    assert_eq!(back, r);
    assert_eq!(back.to_json().unwrap(), text);
}

#[test]
fn report_rejects_unknown_schema() {
    let text = thermal_report(0.0).to_json().unwrap().replacen("\"schema_version\": 1", "\"schema_version\": 99", 1);
    assert!(FitReportFile::from_json(&text).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn arbitrary_floats_survive_json(jitter in -0.3f64..0.3) {
        let r = thermal_report(jitter);
        let text = r.to_json().unwrap();
        let back = FitReportFile::from_json(&text).unwrap();
        prop_assert_eq!(&back, &r);
        prop_assert_eq!(back.to_json().unwrap(), text);
    }
}
