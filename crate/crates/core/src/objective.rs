//! Poisson log-likelihood, Laplace log-prior and the combined MAP objective,
//! plus the sum-of-squares baseline. All objectives are maximized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DelayGrid;
use crate::models::{evaluate_into, ModelSpec};

/// Binned coincidence counts on a delay grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    grid: DelayGrid,
    counts: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    unit: Option<String>,
}

impl Histogram {
    pub fn new(grid: DelayGrid, counts: Vec<u64>) -> Result<Self> {
        if grid.len() != counts.len() {
            return Err(Error::Alignment(format!(
                "{} counts for {} grid points",
                counts.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid,
            counts,
            unit: None,
        })
    }

    pub fn with_unit(mut self, unit: Option<String>) -> Self {
        self.unit = unit;
        self
    }

    pub fn grid(&self) -> &DelayGrid {
        &self.grid
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn unit(&self) -> Option<&str> {
        self.unit.as_deref()
    }

    pub fn total_photons(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn max_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Map,
    Mle,
    Lsq,
}

impl std::fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ObjectiveKind::Map => "map",
            ObjectiveKind::Mle => "mle",
            ObjectiveKind::Lsq => "lsq",
        })
    }
}

/// Prior weights: one scalar broadcast to every regularized parameter, or
/// one weight per regularized parameter in layout order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Lambda {
    Scalar(f64),
    PerParam(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    pub lambda: Lambda,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self::mle()
    }
}

impl ObjectiveConfig {
    pub fn mle() -> Self {
        Self {
            kind: ObjectiveKind::Mle,
            lambda: Lambda::Scalar(0.0),
        }
    }

    pub fn map(lambda: f64) -> Self {
        Self {
            kind: ObjectiveKind::Map,
            lambda: Lambda::Scalar(lambda),
        }
    }

    pub fn map_per_param(lambda: Vec<f64>) -> Self {
        Self {
            kind: ObjectiveKind::Map,
            lambda: Lambda::PerParam(lambda),
        }
    }

    pub fn lsq() -> Self {
        Self {
            kind: ObjectiveKind::Lsq,
            lambda: Lambda::Scalar(0.0),
        }
    }

    /// Weights aligned with `spec.regularized_indices()`.
    pub fn resolve_lambda(&self, spec: &ModelSpec) -> Result<Vec<f64>> {
        let n = spec.regularized_indices().len();
        let weights = match &self.lambda {
            Lambda::Scalar(l) => vec![*l; n],
            Lambda::PerParam(v) => {
                if v.len() != n {
                    return Err(Error::Config(format!(
                        "{} lambda weights for {} regularized parameters",
                        v.len(),
                        n
                    )));
                }
                v.clone()
            }
        };
        if let Some(l) = weights.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::Config(format!("lambda weight {l} must be finite and >= 0")));
        }
        if self.kind != ObjectiveKind::Map && weights.iter().any(|&l| l != 0.0) {
            return Err(Error::Config(format!("{} objective requires lambda = 0", self.kind)));
        }
        Ok(weights)
    }
}

fn check_lengths(y: &[f64], counts: &[u64]) -> Result<()> {
    if y.len() != counts.len() {
        return Err(Error::Alignment(format!("{} rates for {} counts", y.len(), counts.len())));
    }
    if y.iter().any(|v| v.is_nan()) {
        return Err(Error::Validation("NaN in expected counts".into()));
    }
    Ok(())
}

/// `sum_i (n_i log y_i - y_i)`, with the constant `-log n_i!` dropped.
///
/// Returns negative infinity when some bin with counts has `y_i <= 0`
/// (or any `y_i < 0`), so optimizers simply reject the point.
pub fn poisson_loglik(y: &[f64], counts: &[u64]) -> Result<f64> {
    check_lengths(y, counts)?;
    Ok(loglik_unchecked(y, counts))
}

#[inline]
fn loglik_unchecked(y: &[f64], counts: &[u64]) -> f64 {
    let mut total = 0.0;
    for (&yi, &ni) in y.iter().zip(counts) {
        if yi < 0.0 || (ni > 0 && yi <= 0.0) || yi.is_nan() {
            return f64::NEG_INFINITY;
        }
        if ni > 0 {
            total += ni as f64 * yi.ln();
        }
        total -= yi;
    }
    total
}

/// Elementwise `dL/dy_i = n_i / y_i - 1`.
pub fn loglik_grad_y(y: &[f64], counts: &[u64]) -> Result<Vec<f64>> {
    check_lengths(y, counts)?;
    Ok(y.iter()
        .zip(counts)
        .map(|(&yi, &ni)| {
            if ni == 0 {
                -1.0
            } else if yi <= 0.0 {
                f64::INFINITY
            } else {
                ni as f64 / yi - 1.0
            }
        })
        .collect())
}

/// `-sum_j lambda_j |theta_j|` over the regularized parameters.
pub fn laplace_logprior(theta: &[f64], spec: &ModelSpec, config: &ObjectiveConfig) -> Result<f64> {
    let weights = config.resolve_lambda(spec)?;
    if theta.len() != spec.dim() {
        return Err(Error::Layout {
            expected: spec.dim(),
            got: theta.len(),
        });
    }
    Ok(prior_unchecked(theta, &spec.regularized_indices(), &weights))
}

#[inline]
fn prior_unchecked(theta: &[f64], idx: &[usize], weights: &[f64]) -> f64 {
    -idx.iter().zip(weights).map(|(&i, &l)| l * theta[i].abs()).sum::<f64>()
}

/// Log-posterior up to constants: Poisson log-likelihood of `y(theta)` plus
/// the Laplace log-prior. With an MLE config the prior is not added at all.
pub fn map_objective(theta: &[f64], spec: &ModelSpec, hist: &Histogram, config: &ObjectiveConfig) -> Result<f64> {
    let weights = config.resolve_lambda(spec)?;
    let mut y = vec![0.0; hist.len()];
    evaluate_into(spec, theta, hist.grid(), &mut y)?;
    let ll = poisson_loglik(&y, hist.counts())?;
    match config.kind {
        ObjectiveKind::Mle => Ok(ll),
        _ => Ok(ll + prior_unchecked(theta, &spec.regularized_indices(), &weights)),
    }
}

/// Negated residual sum of squares `-sum_i (n_i - y_i)^2`.
pub fn lsq_objective(theta: &[f64], spec: &ModelSpec, hist: &Histogram) -> Result<f64> {
    let mut y = vec![0.0; hist.len()];
    evaluate_into(spec, theta, hist.grid(), &mut y)?;
    Ok(-y
        .iter()
        .zip(hist.counts())
        .map(|(&yi, &ni)| (ni as f64 - yi).powi(2))
        .sum::<f64>())
}

/// Residuals `y_i(theta) - n_i` for least-squares solvers.
pub fn lsq_residuals(theta: &[f64], spec: &ModelSpec, hist: &Histogram) -> Result<Vec<f64>> {
    let mut y = vec![0.0; hist.len()];
    evaluate_into(spec, theta, hist.grid(), &mut y)?;
    Ok(y.iter().zip(hist.counts()).map(|(&yi, &ni)| yi - ni as f64).collect())
}

/// A scalar function of the flat parameter vector to be maximized.
///
/// Implementations return `-inf` for points they cannot evaluate.
pub trait Objective: Sync {
    fn value(&self, theta: &[f64]) -> f64;
    fn kind(&self) -> ObjectiveKind;
    fn spec(&self) -> &ModelSpec;
    fn histogram(&self) -> &Histogram;
}

/// A model, a histogram and an objective configuration bound together.
#[derive(Debug, Clone)]
pub struct FitProblem {
    spec: ModelSpec,
    hist: Histogram,
    config: ObjectiveConfig,
    reg_idx: Vec<usize>,
    weights: Vec<f64>,
}

impl FitProblem {
    pub fn new(spec: ModelSpec, hist: Histogram, config: ObjectiveConfig) -> Result<Self> {
        let weights = config.resolve_lambda(&spec)?;
        let reg_idx = spec.regularized_indices();
        Ok(Self {
            spec,
            hist,
            config,
            reg_idx,
            weights,
        })
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.config
    }

    /// Resolved per-parameter prior weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn residuals(&self, theta: &[f64]) -> Result<Vec<f64>> {
        lsq_residuals(theta, &self.spec, &self.hist)
    }
}

impl Objective for FitProblem {
    fn value(&self, theta: &[f64]) -> f64 {
        let mut y = vec![0.0; self.hist.len()];
        if evaluate_into(&self.spec, theta, self.hist.grid(), &mut y).is_err() {
            return f64::NEG_INFINITY;
        }
        match self.config.kind {
            ObjectiveKind::Mle => loglik_unchecked(&y, self.hist.counts()),
            ObjectiveKind::Map => {
                loglik_unchecked(&y, self.hist.counts()) + prior_unchecked(theta, &self.reg_idx, &self.weights)
            }
            ObjectiveKind::Lsq => -y
                .iter()
                .zip(self.hist.counts())
                .map(|(&yi, &ni)| (ni as f64 - yi).powi(2))
                .sum::<f64>(),
        }
    }

    fn kind(&self) -> ObjectiveKind {
        self.config.kind
    }

    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn histogram(&self) -> &Histogram {
        &self.hist
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BackgroundMode, ModelVariant, ParamDef, ThermalSumSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn thermal1(c0_upper: f64) -> ModelSpec {
        ModelSpec::new(
            ModelVariant::ThermalGaussianSum(ThermalSumSpec {
                num_gaussians: 1,
                background: BackgroundMode::Free,
            }),
            vec![
                ParamDef::new("c0", 0.0, c0_upper),
                ParamDef::new("c1", 0.0, 10.0).regularized(true),
                ParamDef::new("sigma1", 0.1, 10.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn loglik_examples() {
        assert_eq!(poisson_loglik(&[1.0, 1.0], &[0, 0]).unwrap(), -2.0);
        assert_eq!(poisson_loglik(&[1.0], &[1]).unwrap(), -1.0);
        // 2 ln 2 + 3 ln 3 - 5
        assert_relative_eq!(
            poisson_loglik(&[2.0, 3.0], &[2, 3]).unwrap(),
            -0.317_868_772_875_780_3,
            max_relative = 1e-14
        );
    }

    #[test]
    fn loglik_barrier_and_errors() {
        assert_eq!(poisson_loglik(&[0.0], &[1]).unwrap(), f64::NEG_INFINITY);
        assert_eq!(poisson_loglik(&[-1.0], &[2]).unwrap(), f64::NEG_INFINITY);
        assert_eq!(poisson_loglik(&[0.0, 2.0], &[0, 0]).unwrap(), -2.0);
        assert!(matches!(poisson_loglik(&[f64::NAN], &[1]), Err(Error::Validation(_))));
        assert!(poisson_loglik(&[1.0, 2.0], &[1]).is_err());
    }

    #[test]
    fn grad_examples() {
        assert_eq!(loglik_grad_y(&[1.0], &[1]).unwrap(), vec![0.0]);
        assert_eq!(loglik_grad_y(&[2.0], &[0]).unwrap(), vec![-1.0]);
        assert_eq!(loglik_grad_y(&[2.0], &[4]).unwrap(), vec![1.0]);
        let h = 1e-6;
        let fd = (poisson_loglik(&[2.0 + h], &[4]).unwrap() - poisson_loglik(&[2.0 - h], &[4]).unwrap()) / (2.0 * h);
        assert_relative_eq!(fd, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn prior_examples() {
        let spec = thermal1(10.0);
        assert_eq!(laplace_logprior(&[1.0, 3.0, 1.0], &spec, &ObjectiveConfig::mle()).unwrap(), 0.0);
        assert_eq!(laplace_logprior(&[1.0, 0.0, 1.0], &spec, &ObjectiveConfig::map(5.0)).unwrap(), 0.0);

        let mut two = thermal1(10.0);
        two.set_regularized(&[true, false, true]).unwrap();
        let cfg = ObjectiveConfig::map_per_param(vec![1.0, 2.0]);
        assert_eq!(laplace_logprior(&[0.5, 7.0, -1.0], &two, &cfg).unwrap(), -2.5);

        let wrong = ObjectiveConfig::map_per_param(vec![1.0, 2.0, 3.0]);
        assert!(matches!(laplace_logprior(&[0.5, 7.0, 1.0], &two, &wrong), Err(Error::Config(_))));
        let bad_mle = ObjectiveConfig {
            kind: ObjectiveKind::Mle,
            lambda: Lambda::Scalar(1.0),
        };
        assert!(bad_mle.resolve_lambda(&two).is_err());
    }

    #[test]
    fn map_reduces_to_loglik() {
        let spec = thermal1(10.0);
        let grid = DelayGrid::uniform(-3.0, 1.0, 7).unwrap();
        let hist = Histogram::new(grid.clone(), vec![0, 1, 3, 5, 2, 0, 1]).unwrap();
        let theta = [0.3, 4.0, 1.2];
        let y = crate::models::evaluate(&spec, &theta, &grid).unwrap();
        let ll = poisson_loglik(&y, hist.counts()).unwrap();
        let mle = map_objective(&theta, &spec, &hist, &ObjectiveConfig::mle()).unwrap();
        let map0 = map_objective(&theta, &spec, &hist, &ObjectiveConfig::map(0.0)).unwrap();
        assert_eq!(mle.to_bits(), ll.to_bits());
        assert_eq!(map0.to_bits(), ll.to_bits());
        let problem = FitProblem::new(spec.clone(), hist.clone(), ObjectiveConfig::mle()).unwrap();
        assert_eq!(problem.value(&theta).to_bits(), ll.to_bits());
    }

    #[test]
    fn map_constant_model() {
        let spec = thermal1(10.0);
        let grid = DelayGrid::uniform(0.0, 1.0, 2).unwrap();
        let hist = Histogram::new(grid, vec![0, 0]).unwrap();
        assert_eq!(map_objective(&[1.0, 0.0, 2.5], &spec, &hist, &ObjectiveConfig::map(1.0)).unwrap(), -2.0);
    }

    #[test]
    fn lsq_examples() {
        let spec = thermal1(10.0);
        let grid = DelayGrid::uniform(0.0, 1.0, 2).unwrap();
        let hist = Histogram::new(grid.clone(), vec![1, 1]).unwrap();
        assert_eq!(lsq_objective(&[0.0, 0.0, 1.0], &spec, &hist).unwrap(), -2.0);
        let exact = Histogram::new(grid.clone(), vec![3, 3]).unwrap();
        assert_eq!(lsq_objective(&[3.0, 0.0, 1.0], &spec, &exact).unwrap(), 0.0);
        // n = [2, 3], y = [2, 4]: two-point grid through a flat model plus residual arithmetic
        let y = [2.0, 4.0];
        let n = [2u64, 3];
        let lsq: f64 = -y.iter().zip(&n).map(|(a, &b)| (b as f64 - a).powi(2)).sum::<f64>();
        assert_eq!(lsq, -1.0);
    }

    #[test]
    fn fisher_diagonal_is_inverse_rate() {
        // E[-d2L/dy2] under n ~ Poisson(y) equals 1/y, so (F^-1)_ii = y_i.
        for &y in &[0.3, 1.0, 5.0, 12.5] {
            let h = 1e-5 * y;
            let mut info = 0.0;
            let mut pmf = (-y as f64).exp();
            for n in 0u64..200 {
                if n > 0 {
                    pmf *= y / n as f64;
                }
                let g_plus = loglik_grad_y(&[y + h], &[n]).unwrap()[0];
                let g_minus = loglik_grad_y(&[y - h], &[n]).unwrap()[0];
                info += pmf * -(g_plus - g_minus) / (2.0 * h);
            }
            assert_relative_eq!(1.0 / info, y, max_relative = 1e-6);
        }
    }

    proptest! {
        #[test]
        fn grad_matches_finite_differences(
            pairs in proptest::collection::vec((0.05f64..50.0, 0u64..40), 1..20)
        ) {
            let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let n: Vec<u64> = pairs.iter().map(|p| p.1).collect();
            let g = loglik_grad_y(&y, &n).unwrap();
            for i in 0..y.len() {
                let h = 1e-6 * y[i];
                let (mut yp, mut ym) = (y.clone(), y.clone());
                yp[i] += h;
                ym[i] -= h;
                let fd = (poisson_loglik(&yp, &n).unwrap() - poisson_loglik(&ym, &n).unwrap()) / (2.0 * h);
                // single-bin difference avoids cancellation against the other bins
                let fd_local = (poisson_loglik(&yp[i..=i], &n[i..=i]).unwrap()
                    - poisson_loglik(&ym[i..=i], &n[i..=i]).unwrap()) / (2.0 * h);
                prop_assert!((fd_local - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0));
                prop_assert!((fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1.0));
            }
        }

        #[test]
        fn loglik_peaks_at_counts(n in 1u64..100, f in 0.2f64..5.0) {
            let g = loglik_grad_y(&[n as f64 * f], &[n]).unwrap()[0];
            if f < 1.0 { prop_assert!(g > 0.0) } else if f > 1.0 { prop_assert!(g < 0.0) }
            let at = poisson_loglik(&[n as f64], &[n]).unwrap();
            let off = poisson_loglik(&[n as f64 * f], &[n]).unwrap();
            prop_assert!(at >= off);
        }

        #[test]
        fn prior_is_monotone_in_lambda(l1 in 0.0f64..10.0, dl in 0.0f64..10.0, c1 in 0.0f64..10.0) {
            let spec = thermal1(10.0);
            let grid = DelayGrid::uniform(-2.0, 1.0, 5).unwrap();
            let hist = Histogram::new(grid, vec![1, 2, 4, 2, 1]).unwrap();
            let theta = [0.5, c1, 1.3];
            let a = map_objective(&theta, &spec, &hist, &ObjectiveConfig::map(l1)).unwrap();
            let b = map_objective(&theta, &spec, &hist, &ObjectiveConfig::map(l1 + dl)).unwrap();
            prop_assert!(b <= a);
        }

        #[test]
        fn loglik_is_order_invariant(
            pairs in proptest::collection::vec((0.05f64..50.0, 0u64..40), 2..30),
            rot in 0usize..30,
        ) {
            let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let n: Vec<u64> = pairs.iter().map(|p| p.1).collect();
            let mut yr = y.clone();
            let mut nr = n.clone();
            let k = rot % y.len();
            yr.rotate_left(k);
            nr.rotate_left(k);
            yr.reverse();
            nr.reverse();
            let a = poisson_loglik(&y, &n).unwrap();
            let b = poisson_loglik(&yr, &nr).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
