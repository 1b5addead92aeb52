//! Monte Carlo studies: the per-bin variance check against the Poisson
//! bound, paired estimator benchmarks, and integration-time ladders.
//!
//! Benchmarks are scored against the known synthetic ground truth
//! `T * y(theta*)`, not against a long real acquisition.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures::Fixture;
use crate::grid::DelayGrid;
use crate::metrics::{median, nrmse};
use crate::models::ModelSpec;
use crate::objective::{FitProblem, Histogram, ObjectiveConfig, ObjectiveKind};
use crate::optim::{
    draw_guesses, least_squares_from_guesses, maximize_from_guesses, FitResult, MultiStartPlan, OptimizerSettings,
};
use crate::sampler::{generate_synthetic, sample_poisson, scale_signal, substream_seed, SamplerConfig};

pub const REFERENCE_NOTE: &str = "errors are measured against the synthetic ground truth T * y(theta*)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinMoments {
    pub mean: f64,
    pub variance: f64,
    /// `variance / mean`; `None` for a bin that never saw a photon.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrbReport {
    pub n_replicates: usize,
    pub bins: Vec<BinMoments>,
    /// Every bin was identically zero (e.g. `T = 0`).
    pub degenerate: bool,
    pub mean_ratio: Option<f64>,
    /// Standard error of `mean_ratio` across bins.
    pub ratio_std_error: Option<f64>,
}

/// Per-bin empirical mean and variance of replicate counts.
///
/// Raw counts are an unbiased estimator of `T * y_i` whose variance sits
/// exactly at the Poisson bound, so the variance/mean ratios concentrate
/// around one.
pub fn crb_empirical_check(
    spec: &ModelSpec,
    theta_true: &[f64],
    grid: &DelayGrid,
    t: f64,
    n_replicates: usize,
    seed: u64,
) -> Result<CrbReport> {
    if n_replicates < 1000 {
        return Err(Error::Config(format!("need at least 1000 replicates, got {n_replicates}")));
    }
    let reps = generate_synthetic(
        spec,
        theta_true,
        grid,
        &SamplerConfig {
            time_scale: t,
            seed,
            n_replicates,
        },
    )?;
    let counts: Vec<&[u64]> = reps.iter().map(|r| r.histogram.counts()).collect();
    Ok(moments_report(&counts, grid.len()))
}

pub(crate) fn moments_report(replicates: &[&[u64]], bins: usize) -> CrbReport {
    let n = replicates.len() as f64;
    let bins: Vec<BinMoments> = (0..bins)
        .map(|i| {
            let mean = replicates.iter().map(|r| r[i] as f64).sum::<f64>() / n;
            let variance = replicates.iter().map(|r| (r[i] as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
            BinMoments {
                mean,
                variance,
                ratio: (mean > 0.0).then(|| variance / mean),
            }
        })
        .collect();
    let ratios: Vec<f64> = bins.iter().filter_map(|b| b.ratio).collect();
    let degenerate = ratios.is_empty();
    let (mean_ratio, ratio_std_error) = if degenerate {
        (None, None)
    } else {
        let k = ratios.len() as f64;
        let m = ratios.iter().sum::<f64>() / k;
        let se = if ratios.len() > 1 {
            (ratios.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
        } else {
            0.0
        };
        (Some(m), Some(se))
    };
    CrbReport {
        n_replicates: replicates.len(),
        bins,
        degenerate,
        mean_ratio,
        ratio_std_error,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum Method {
    Map { lambda: f64 },
    Mle,
    Lsq,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Map { lambda } => format!("map(lambda={lambda})"),
            Method::Mle => "mle".into(),
            Method::Lsq => "lsq".into(),
        }
    }

    pub fn config(&self) -> ObjectiveConfig {
        match *self {
            Method::Map { lambda } => ObjectiveConfig::map(lambda),
            Method::Mle => ObjectiveConfig::mle(),
            Method::Lsq => ObjectiveConfig::lsq(),
        }
    }
}

/// Fits one histogram with a method. LSQ runs Levenberg-Marquardt; the
/// likelihood objectives run Powell.
pub fn fit_with_method(
    method: Method,
    spec: &ModelSpec,
    hist: &Histogram,
    guesses: Vec<Vec<f64>>,
    plan: &MultiStartPlan,
    settings: &OptimizerSettings,
) -> Result<FitResult> {
    match method {
        Method::Lsq => least_squares_from_guesses(spec, hist, guesses, plan, settings),
        m => {
            let problem = FitProblem::new(spec.clone(), hist.clone(), m.config())?;
            maximize_from_guesses(&problem, guesses, plan, settings)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub photon_budget: f64,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Restart count and guess strategy; the seed is replaced per histogram.
    pub plan: MultiStartPlan,
    pub settings: OptimizerSettings,
    /// Start a single local run at the ground truth instead of drawing guesses.
    #[serde(default)]
    pub start_at_truth: bool,
    /// Per-parameter bound replacements applied to the fitting layout.
    #[serde(default)]
    pub bound_overrides: Vec<(String, f64, f64)>,
    /// Keep wall-time statistics; off by default so reports are reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub method: String,
    pub total_photons: u64,
    pub theta_hat: Vec<f64>,
    /// `theta_hat - theta_true` per parameter.
    pub errors: Vec<f64>,
    pub nrmse: Option<f64>,
    pub objective_value: f64,
    pub converged: bool,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub name: String,
    pub truth: f64,
    pub bias: f64,
    pub variance: f64,
    pub median_abs_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallTimeStats {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub method: String,
    pub n_seeds: usize,
    pub n_fitted: usize,
    pub success_rate: f64,
    pub params: Vec<ParamStats>,
    pub median_nrmse: Option<f64>,
    /// Every seed failed for this method.
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<WallTimeStats>,
}

impl MethodStats {
    pub fn param(&self, name: &str) -> Option<&ParamStats> {
        self.params.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleBenchmark {
    pub fixture: String,
    pub reference: String,
    pub photon_budget: f64,
    pub time_scale: f64,
    pub param_names: Vec<String>,
    pub theta_true: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodStats>,
    pub per_seed: Vec<SeedOutcome>,
}

impl EnsembleBenchmark {
    pub fn method(&self, label: &str) -> Option<&MethodStats> {
        self.methods.iter().find(|m| m.method == label)
    }

    pub fn outcomes<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a SeedOutcome> + 'a {
        self.per_seed.iter().filter(move |o| o.method == label)
    }
}

/// Histogram used for `seed` in a benchmark; identical for every method.
pub fn benchmark_histogram(fixture: &Fixture, time_scale: f64, seed: u64) -> Result<Histogram> {
    let rate = scale_signal(&fixture.curve, time_scale)?;
    let counts = sample_poisson(&rate, substream_seed(seed, 0))?;
    Ok(Histogram::new(fixture.grid.clone(), counts)?.with_unit(fixture.params.unit.clone()))
}

/// Fitting layout for a histogram: the fixture's model with default bounds.
pub fn fitting_spec(fixture: &Fixture, hist: &Histogram, overrides: &[(String, f64, f64)]) -> Result<ModelSpec> {
    let mut spec = ModelSpec::with_default_bounds(fixture.spec.variant().clone(), hist.grid(), hist.max_count())?;
    for (name, lo, hi) in overrides {
        spec.set_bounds(name, *lo, *hi)?;
    }
    Ok(spec)
}

fn interior(spec: &ModelSpec, theta: &[f64]) -> bool {
    spec.layout().iter().zip(theta).all(|(d, &v)| {
        let eps = 1e-9 * (d.upper - d.lower);
        v > d.lower + eps && v < d.upper - eps
    })
}

fn run_seed(fixture: &Fixture, config: &BenchmarkConfig, t: f64, truth: &[f64], seed: u64) -> Result<Vec<SeedOutcome>> {
    let hist = benchmark_histogram(fixture, t, seed)?;
    let spec = fitting_spec(fixture, &hist, &config.bound_overrides)?;
    let reference = fixture.curve_at(t);
    let plan = MultiStartPlan {
        seed,
        parallel: false,
        ..config.plan
    };
    let guesses = if config.start_at_truth {
        vec![truth.to_vec()]
    } else {
        draw_guesses(&spec, &plan)
    };
    Ok(config
        .methods
        .iter()
        .map(|&method| {
            let started = Instant::now();
            let fit = fit_with_method(method, &spec, &hist, guesses.clone(), &plan, &config.settings);
            let wall_time = config.record_wall_time.then(|| started.elapsed().as_secs_f64());
            match fit {
                Ok(fit) => SeedOutcome {
                    seed,
                    method: method.label(),
                    total_photons: hist.total_photons(),
                    errors: fit.theta_hat.iter().zip(truth).map(|(a, b)| a - b).collect(),
                    nrmse: nrmse(&fit.fitted_curve, &reference).ok(),
                    objective_value: fit.objective_value,
                    converged: fit.converged,
                    success: fit.converged && interior(&spec, &fit.theta_hat),
                    theta_hat: fit.theta_hat,
                    wall_time,
                },
                Err(_) => SeedOutcome {
                    seed,
                    method: method.label(),
                    total_photons: hist.total_photons(),
                    theta_hat: vec![f64::NAN; truth.len()],
                    errors: vec![f64::NAN; truth.len()],
                    nrmse: None,
                    objective_value: f64::NAN,
                    converged: false,
                    success: false,
                    wall_time,
                },
            }
        })
        .collect())
}

fn method_stats(label: &str, names: &[String], truth: &[f64], outcomes: &[&SeedOutcome]) -> MethodStats {
    let fitted: Vec<&&SeedOutcome> = outcomes.iter().filter(|o| o.errors.iter().all(|e| e.is_finite())).collect();
    let params = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let errs: Vec<f64> = fitted.iter().map(|o| o.errors[j]).collect();
            let k = errs.len() as f64;
            let bias = if errs.is_empty() { f64::NAN } else { errs.iter().sum::<f64>() / k };
            let variance = if errs.len() > 1 {
                errs.iter().map(|e| (e - bias).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            let abs: Vec<f64> = errs.iter().map(|e| e.abs()).collect();
            ParamStats {
                name: name.clone(),
                truth: truth[j],
                bias,
                variance,
                median_abs_error: median(&abs).unwrap_or(f64::NAN),
            }
        })
        .collect();
    let times: Vec<f64> = outcomes.iter().filter_map(|o| o.wall_time).collect();
    let nrmses: Vec<f64> = outcomes.iter().filter_map(|o| o.nrmse).collect();
    MethodStats {
        method: label.to_string(),
        n_seeds: outcomes.len(),
        n_fitted: fitted.len(),
        success_rate: outcomes.iter().filter(|o| o.success).count() as f64 / outcomes.len().max(1) as f64,
        params,
        median_nrmse: median(&nrmses),
        failed: fitted.is_empty(),
        wall_time: median(&times).map(|med| WallTimeStats {
            mean: times.iter().sum::<f64>() / times.len() as f64,
            median: med,
            max: times.iter().cloned().fold(0.0, f64::max),
        }),
    }
}

/// Paired benchmark: every method fits the same histogram per seed with the
/// same restart guesses, and statistics are computed per method.
pub fn run_ensemble_benchmark(fixture: &Fixture, config: &BenchmarkConfig) -> Result<EnsembleBenchmark> {
    if !(config.photon_budget > 0.0) {
        return Err(Error::Config("photon budget must be positive".into()));
    }
    if config.methods.is_empty() {
        return Err(Error::Config("no methods selected".into()));
    }
    config.settings.validate()?;
    let t = fixture.time_scale_for_budget(config.photon_budget);
    let truth = fixture.theta_at(t);
    let per_seed: Vec<SeedOutcome> = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(fixture, config, t, &truth, seed))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let names: Vec<String> = fixture.spec.names().iter().map(|s| s.to_string()).collect();
    let methods = config
        .methods
        .iter()
        .map(|m| {
            let label = m.label();
            let outcomes: Vec<&SeedOutcome> = per_seed.iter().filter(|o| o.method == label).collect();
            method_stats(&label, &names, &truth, &outcomes)
        })
        .collect();
    Ok(EnsembleBenchmark {
        fixture: fixture.name.to_string(),
        reference: REFERENCE_NOTE.to_string(),
        photon_budget: config.photon_budget,
        time_scale: t,
        param_names: names,
        theta_true: truth,
        seeds: config.seeds.clone(),
        methods,
        per_seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRung {
    pub time_scale: f64,
    pub histogram: Histogram,
    pub expected_total: f64,
    /// NRMSE of the simulated counts against the scaled fit; `None` when
    /// the scaled curve is flat (e.g. `T = 0`).
    pub nrmse: Option<f64>,
}

/// Predicts longer acquisitions: scales the fitted curve by each `T`,
/// samples a histogram (rung `k` on substream `k` of `seed`) and scores it
/// against the scaled curve.
pub fn integration_time_ladder(fit: &FitResult, grid: &DelayGrid, ladder: &[f64], seed: u64) -> Result<Vec<LadderRung>> {
    if fit.fitted_curve.len() != grid.len() {
        return Err(Error::Alignment(format!(
            "fitted curve has {} points, grid has {}",
            fit.fitted_curve.len(),
            grid.len()
        )));
    }
    ladder
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let rate = scale_signal(&fit.fitted_curve, t)?;
            let counts = sample_poisson(&rate, substream_seed(seed, k as u64))?;
            let observed: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            Ok(LadderRung {
                time_scale: t,
                expected_total: rate.iter().sum(),
                nrmse: nrmse(&observed, &rate).ok(),
                histogram: Histogram::new(grid.clone(), counts)?,
            })
        })
        .collect()
}

/// Kind of objective a method optimizes.
pub fn method_kind(method: Method) -> ObjectiveKind {
    method.config().kind
}
