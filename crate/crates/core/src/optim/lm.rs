use nalgebra::{DMatrix, DVector};

use super::OptimizerSettings;
use crate::error::{Error, Result};

/// Forward-difference step scale: `h_j = FD_STEP * (1 + |x_j|)`.
const FD_STEP: f64 = 1e-6;
const MAX_DAMPING_TRIES: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub x: Vec<f64>,
    /// Residual sum of squares at `x`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Levenberg-Marquardt on `sum r(x)^2` inside a box.
///
/// The Jacobian is a forward difference (backward at an upper bound).
/// Damping starts at zero, so the first trial is a plain Gauss-Newton step,
/// and uses Marquardt's diagonal scaling once a step is rejected. Trial
/// points are projected onto the box. `residuals` returns `None` for points
/// it cannot evaluate; those steps are rejected like uphill ones.
pub fn levenberg_marquardt<R>(
    residuals: R,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    settings: &OptimizerSettings,
) -> Result<LmOutcome>
where
    R: Fn(&[f64]) -> Option<Vec<f64>>,
{
    settings.validate()?;
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::Layout {
            expected: n,
            got: lower.len().min(upper.len()),
        });
    }
    let mut r = residuals(x0)
        .filter(|r| r.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Validation("residuals are not finite at the start point".into()))?;
    let m = r.len();
    let mut x = x0.to_vec();
    let mut cost = sum_sq(&r);
    if cost == 0.0 {
        return Ok(LmOutcome {
            x,
            cost,
            iterations: 0,
            converged: true,
        });
    }

    let mut mu = 0.0_f64;
    let mut iterations = 0;
    let mut converged = false;
    let mut jac = DMatrix::<f64>::zeros(m, n);
    let mut xh = x.clone();

    'outer: while iterations < settings.max_iters {
        iterations += 1;
        for j in 0..n {
            let mut h = FD_STEP * (1.0 + x[j].abs());
            if x[j] + h > upper[j] {
                h = -h;
            }
            xh.clone_from(&x);
            xh[j] += h;
            let Some(rh) = residuals(&xh).filter(|v| v.iter().all(|e| e.is_finite())) else {
                break 'outer;
            };
            for i in 0..m {
                jac[(i, j)] = (rh[i] - r[i]) / h;
            }
        }
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * rv;
        if g.amax() <= f64::EPSILON * cost.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        let max_diag = (0..n).map(|j| jtj[(j, j)]).fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
        let mut accepted = false;
        let mut last_step = f64::INFINITY;
        for _ in 0..MAX_DAMPING_TRIES {
            let mut a = jtj.clone();
            if mu > 0.0 {
                for j in 0..n {
                    a[(j, j)] += mu * jtj[(j, j)].max(1e-12 * max_diag);
                }
            }
            let step = a.cholesky().map(|c| c.solve(&(-&g)));
            let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) else {
                mu = (mu * 10.0).max(1e-3);
                continue;
            };
            let trial: Vec<f64> = (0..n).map(|j| (x[j] + step[j]).clamp(lower[j], upper[j])).collect();
            last_step = (0..n).map(|j| (trial[j] - x[j]).powi(2)).sum::<f64>().sqrt();
            let r_new = residuals(&trial).filter(|v| v.iter().all(|e| e.is_finite()));
            match r_new {
                Some(r_new) if sum_sq(&r_new) < cost => {
                    let new_cost = sum_sq(&r_new);
                    let decrease = cost - new_cost;
                    let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    x = trial;
                    r = r_new;
                    cost = new_cost;
                    mu = if mu < 1e-12 { 0.0 } else { mu / 10.0 };
                    accepted = true;
                    if cost == 0.0
                        || decrease <= settings.ftol * cost
                        || last_step <= settings.xtol * (xnorm + settings.xtol)
                    {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                _ => {
                    mu = (mu * 10.0).max(1e-3);
                }
            }
        }
        if !accepted {
            // no downhill step at any damping: stationary to working precision
            let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            converged = last_step <= settings.xtol * (xnorm + settings.xtol);
            break;
        }
    }
    Ok(LmOutcome {
        x,
        cost,
        iterations,
        converged,
    })
}
