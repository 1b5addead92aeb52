//! Paired benchmark on the bundled pulsed fixture.
//!
//! usage: pulsed_study <budget> <seeds> <restarts> [period_window] [methods]
//! methods is a comma list of mle, lsq, map:<lambda>.

use g2fit_core::bench::{run_ensemble_benchmark, BenchmarkConfig, Method};
use g2fit_core::fixtures;
use g2fit_core::models::center_peak_ratio;
use g2fit_core::{MultiStartPlan, OptimizerSettings};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let budget: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(500.0);
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let restarts: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(32);
    let window: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let methods: Vec<Method> = args
        .get(5)
        .map(String::as_str)
        .unwrap_or("mle")
        .split(',')
        .map(|m| match m {
            "mle" => Method::Mle,
            "lsq" => Method::Lsq,
            other => Method::Map {
                lambda: other.trim_start_matches("map:").parse().expect("map:<lambda>"),
            },
        })
        .collect();
    let fx = fixtures::pulsed();
    let period = fx.pulsed_params().unwrap().lambda;
    let overrides = if window > 0.0 {
        vec![("lambda".to_string(), period * (1.0 - window), period * (1.0 + window))]
    } else {
        vec![]
    };
    let config = BenchmarkConfig {
        photon_budget: budget,
        seeds: (0..seeds).collect(),
        methods,
        plan: MultiStartPlan {
            restarts,
            ..Default::default()
        },
        settings: OptimizerSettings::default(),
        start_at_truth: false,
        bound_overrides: overrides,
        record_wall_time: false,
    };
    let started = std::time::Instant::now();
    let b = run_ensemble_benchmark(&fx, &config).unwrap();
    let g2 = b.param_names.iter().position(|n| n == "gamma2").unwrap();
    for m in &b.methods {
        let mut recovered = 0;
        for o in b.outcomes(&m.method) {
            let gamma_ok = (o.errors[g2] / b.theta_true[g2]).abs() <= 0.2;
            let ratio = fx
                .spec
                .pulsed_params(&o.theta_hat)
                .ok()
                .and_then(|p| center_peak_ratio(&p, match fx.spec.variant() {
                    g2fit_core::ModelVariant::PulsedEmitter(s) => s,
                    _ => unreachable!(),
                }).ok());
            if gamma_ok && ratio.is_some_and(|r| r < 0.5) {
                recovered += 1;
            }
        }
        let gs = &m.params[g2];
        println!(
            "{:>14} recovered {}/{} success {:.2} median|dgamma2| {:.4} bias {:.4} var {:.4} median nrmse {:?}",
            m.method, recovered, m.n_seeds, m.success_rate, gs.median_abs_error, gs.bias, gs.variance, m.median_nrmse
        );
    }
    println!("elapsed {:.1}s", started.elapsed().as_secs_f64());
}
