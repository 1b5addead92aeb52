use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lm::levenberg_marquardt;
use super::powell::powell_minimize;
use super::OptimizerSettings;
use crate::error::{Error, Result};
use crate::models::{evaluate, ModelSpec};
use crate::objective::{lsq_residuals, Histogram, Objective, ObjectiveKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuessStrategy {
    /// Independent uniform draws; log-scaled parameters are log-uniform.
    UniformInBounds,
    /// One stratum per restart in every coordinate.
    LatinHypercube,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiStartPlan {
    pub restarts: usize,
    pub seed: u64,
    pub guess_strategy: GuessStrategy,
    /// Restart records kept in the result, best first.
    pub keep_top: usize,
    /// Run restarts on the rayon pool. Selection does not depend on it.
    #[serde(default)]
    pub parallel: bool,
}

impl Default for MultiStartPlan {
    fn default() -> Self {
        Self {
            restarts: 64,
            seed: 0,
            guess_strategy: GuessStrategy::UniformInBounds,
            keep_top: 5,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub index: usize,
    pub guess: Vec<f64>,
    pub theta: Vec<f64>,
    /// Final objective value (maximization framing).
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    pub objective_value: f64,
    pub objective_kind: ObjectiveKind,
    /// Best `keep_top` restarts, best first.
    pub restart_records: Vec<RestartRecord>,
    pub n_restarts: usize,
    pub n_converged: usize,
    /// False only when no restart converged.
    pub converged: bool,
    pub fitted_curve: Vec<f64>,
    pub total_photons: u64,
    pub wall_time: f64,
}

/// Initial guesses for a plan, from a stream seeded by `plan.seed`.
pub fn draw_guesses(spec: &ModelSpec, plan: &MultiStartPlan) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let dim = spec.dim();
    let r = plan.restarts;
    let unit: Vec<Vec<f64>> = match plan.guess_strategy {
        GuessStrategy::UniformInBounds => (0..r).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect(),
        GuessStrategy::LatinHypercube => {
            let mut u = vec![vec![0.0; dim]; r];
            for j in 0..dim {
                let mut strata: Vec<usize> = (0..r).collect();
                strata.shuffle(&mut rng);
                for (k, s) in strata.into_iter().enumerate() {
                    u[k][j] = (s as f64 + rng.random::<f64>()) / r as f64;
                }
            }
            u
        }
    };
    unit.into_iter()
        .map(|u| {
            spec.layout()
                .iter()
                .zip(u)
                .map(|(d, ui)| {
                    let v = if d.log_scale {
                        (d.lower.ln() + ui * (d.upper.ln() - d.lower.ln())).exp()
                    } else {
                        d.lower + ui * (d.upper - d.lower)
                    };
                    v.clamp(d.lower, d.upper)
                })
                .collect()
        })
        .collect()
}

fn run_restarts<F>(guesses: Vec<Vec<f64>>, parallel: bool, local: F) -> Vec<RestartRecord>
where
    F: Fn(usize, Vec<f64>) -> RestartRecord + Sync + Send,
{
    if parallel {
        guesses.into_par_iter().enumerate().map(|(i, g)| local(i, g)).collect()
    } else {
        guesses.into_iter().enumerate().map(|(i, g)| local(i, g)).collect()
    }
}

/// Highest value wins; ties go to the lowest restart index.
fn rank(records: &mut [RestartRecord]) {
    records.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.index.cmp(&b.index)));
}

fn assemble(
    mut records: Vec<RestartRecord>,
    plan: &MultiStartPlan,
    spec: &ModelSpec,
    hist: &Histogram,
    kind: ObjectiveKind,
    started: Instant,
) -> Result<FitResult> {
    let n_restarts = records.len();
    let n_converged = records.iter().filter(|r| r.converged).count();
    rank(&mut records);
    let best = records
        .first()
        .filter(|r| r.value.is_finite())
        .ok_or_else(|| Error::Validation("objective is not finite at any restart guess".into()))?
        .clone();
    records.truncate(plan.keep_top.max(1));
    let fitted_curve = evaluate(spec, &best.theta, hist.grid())?;
    Ok(FitResult {
        theta_hat: best.theta,
        objective_value: best.value,
        objective_kind: kind,
        restart_records: records,
        n_restarts,
        n_converged,
        converged: n_converged > 0,
        fitted_curve,
        total_photons: hist.total_photons(),
        wall_time: started.elapsed().as_secs_f64(),
    })
}

fn check_plan(plan: &MultiStartPlan, settings: &OptimizerSettings) -> Result<()> {
    settings.validate()?;
    if plan.restarts < 1 {
        return Err(Error::Config("restarts must be >= 1".into()));
    }
    Ok(())
}

/// Maximizes `objective` with Powell's method from every planned guess and
/// returns the best restart.
pub fn multistart_maximize<O: Objective>(
    objective: &O,
    plan: &MultiStartPlan,
    settings: &OptimizerSettings,
) -> Result<FitResult> {
    check_plan(plan, settings)?;
    maximize_from_guesses(objective, draw_guesses(objective.spec(), plan), plan, settings)
}

/// Like [`multistart_maximize`] with caller-supplied start points; the
/// plan's restart count and seed are ignored.
pub fn maximize_from_guesses<O: Objective>(
    objective: &O,
    guesses: Vec<Vec<f64>>,
    plan: &MultiStartPlan,
    settings: &OptimizerSettings,
) -> Result<FitResult> {
    settings.validate()?;
    let started = Instant::now();
    let spec = objective.spec();
    let (lower, upper) = (spec.lower(), spec.upper());
    let minimand = |x: &[f64]| -objective.value(x);
    let records = run_restarts(guesses, plan.parallel, |index, guess| {
        match powell_minimize(&minimand, &guess, &lower, &upper, settings) {
            Ok(out) => RestartRecord {
                index,
                guess,
                theta: out.x,
                value: -out.fx,
                iterations: out.iterations,
                converged: out.converged,
            },
            Err(_) => RestartRecord {
                index,
                theta: guess.clone(),
                guess,
                value: f64::NEG_INFINITY,
                iterations: 0,
                converged: false,
            },
        }
    });
    assemble(records, plan, spec, objective.histogram(), objective.kind(), started)
}

/// Least-squares baseline: Levenberg-Marquardt from every planned guess.
/// The reported objective is `-sum (n_i - y_i)^2`.
pub fn multistart_least_squares(
    spec: &ModelSpec,
    hist: &Histogram,
    plan: &MultiStartPlan,
    settings: &OptimizerSettings,
) -> Result<FitResult> {
    check_plan(plan, settings)?;
    least_squares_from_guesses(spec, hist, draw_guesses(spec, plan), plan, settings)
}

pub fn least_squares_from_guesses(
    spec: &ModelSpec,
    hist: &Histogram,
    guesses: Vec<Vec<f64>>,
    plan: &MultiStartPlan,
    settings: &OptimizerSettings,
) -> Result<FitResult> {
    settings.validate()?;
    let started = Instant::now();
    let (lower, upper) = (spec.lower(), spec.upper());
    let residuals = |x: &[f64]| lsq_residuals(x, spec, hist).ok();
    let records = run_restarts(guesses, plan.parallel, |index, guess| {
        match levenberg_marquardt(residuals, &guess, &lower, &upper, settings) {
            Ok(out) => RestartRecord {
                index,
                guess,
                theta: out.x,
                value: -out.cost,
                iterations: out.iterations,
                converged: out.converged,
            },
            Err(_) => RestartRecord {
                index,
                theta: guess.clone(),
                guess,
                value: f64::NEG_INFINITY,
                iterations: 0,
                converged: false,
            },
        }
    });
    assemble(records, plan, spec, hist, ObjectiveKind::Lsq, started)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DelayGrid;
    use crate::models::{BackgroundMode, ModelVariant, ParamDef, ThermalSumSpec};
    use crate::objective::{FitProblem, ObjectiveConfig};

    fn thermal_problem(kind: ObjectiveConfig) -> FitProblem {
        let spec = ModelSpec::new(
            ModelVariant::ThermalGaussianSum(ThermalSumSpec {
                num_gaussians: 1,
                background: BackgroundMode::Fixed(0.2),
            }),
            vec![
                ParamDef::new("c1", 0.0, 20.0).regularized(true),
                ParamDef::new("sigma1", 0.2, 20.0).log_scale(true),
            ],
        )
        .unwrap();
        let grid = DelayGrid::uniform(-10.0, 1.0, 21).unwrap();
        let counts = vec![0, 0, 1, 0, 0, 1, 0, 2, 3, 4, 6, 5, 3, 2, 1, 0, 1, 0, 0, 0, 1];
        FitProblem::new(spec, Histogram::new(grid, counts).unwrap(), kind).unwrap()
    }

    #[test]
    fn single_restart_matches_powell() {
        let problem = thermal_problem(ObjectiveConfig::mle());
        let plan = MultiStartPlan {
            restarts: 1,
            seed: 11,
            ..Default::default()
        };
        let settings = OptimizerSettings::default();
        let fit = multistart_maximize(&problem, &plan, &settings).unwrap();
        let guess = &draw_guesses(problem.spec(), &plan)[0];
        let f = |x: &[f64]| -problem.value(x);
        let direct = powell_minimize(&f, guess, &problem.spec().lower(), &problem.spec().upper(), &settings).unwrap();
        assert_eq!(fit.theta_hat, direct.x);
        assert_eq!(fit.objective_value, -direct.fx);
    }

    #[test]
    fn seeded_runs_are_bitwise_identical() {
        let problem = thermal_problem(ObjectiveConfig::mle());
        for strategy in [GuessStrategy::UniformInBounds, GuessStrategy::LatinHypercube] {
            let plan = MultiStartPlan {
                restarts: 8,
                seed: 3,
                guess_strategy: strategy,
                ..Default::default()
            };
            let a = multistart_maximize(&problem, &plan, &OptimizerSettings::default()).unwrap();
            let b = multistart_maximize(&problem, &plan, &OptimizerSettings::default()).unwrap();
            let par = multistart_maximize(
                &problem,
                &MultiStartPlan {
                    parallel: true,
                    ..plan
                },
                &OptimizerSettings::default(),
            )
            .unwrap();
            assert_eq!(a.theta_hat, b.theta_hat);
            assert_eq!(a.restart_records, b.restart_records);
            assert_eq!(a.theta_hat, par.theta_hat);
        }
    }

    #[test]
    fn best_dominates_records() {
        let problem = thermal_problem(ObjectiveConfig::map(0.1));
        let plan = MultiStartPlan {
            restarts: 12,
            keep_top: 12,
            ..Default::default()
        };
        let fit = multistart_maximize(&problem, &plan, &OptimizerSettings::default()).unwrap();
        assert_eq!(fit.restart_records.len(), 12);
        assert!(fit.restart_records.iter().all(|r| r.value <= fit.objective_value));
        assert_eq!(fit.restart_records[0].value, fit.objective_value);
        assert_eq!(fit.fitted_curve, evaluate(problem.spec(), &fit.theta_hat, problem.histogram().grid()).unwrap());
        for (x, d) in fit.theta_hat.iter().zip(problem.spec().layout()) {
            assert!(d.contains(*x));
        }
    }

    #[test]
    fn latin_hypercube_covers_strata() {
        let problem = thermal_problem(ObjectiveConfig::mle());
        let plan = MultiStartPlan {
            restarts: 10,
            guess_strategy: GuessStrategy::LatinHypercube,
            ..Default::default()
        };
        let guesses = draw_guesses(problem.spec(), &plan);
        let mut strata: Vec<usize> = guesses.iter().map(|g| (g[0] / 20.0 * 10.0).floor() as usize).collect();
        strata.sort();
        assert_eq!(strata, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mk = |index, value| RestartRecord {
            index,
            guess: vec![],
            theta: vec![index as f64],
            value,
            iterations: 1,
            converged: true,
        };
        let mut records = vec![mk(3, 1.0), mk(1, 1.0), mk(0, 0.5), mk(2, 1.0)];
        rank(&mut records);
        assert_eq!(records.iter().map(|r| r.index).collect::<Vec<_>>(), vec![1, 2, 3, 0]);
    }

    #[test]
    fn least_squares_baseline_fits() {
        let problem = thermal_problem(ObjectiveConfig::lsq());
        let plan = MultiStartPlan {
            restarts: 8,
            ..Default::default()
        };
        let fit =
            multistart_least_squares(problem.spec(), problem.histogram(), &plan, &OptimizerSettings::default()).unwrap();
        assert_eq!(fit.objective_kind, ObjectiveKind::Lsq);
        let direct = crate::objective::lsq_objective(&fit.theta_hat, problem.spec(), problem.histogram()).unwrap();
        assert!((direct - fit.objective_value).abs() <= 1e-9 * direct.abs().max(1.0));
        // Powell on the same objective should not find anything better
        let powell = multistart_maximize(&problem, &plan, &OptimizerSettings::default()).unwrap();
        assert!(powell.objective_value <= fit.objective_value + 1e-6 * fit.objective_value.abs());
    }
}
