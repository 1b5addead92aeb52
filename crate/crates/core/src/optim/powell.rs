use super::brent::{bracket_minimum, brent_from};
use super::OptimizerSettings;
use crate::error::{Error, Result};

const TINY: f64 = 1e-25;
/// Penalty weight relative to the objective scale at the start point.
const PENALTY_WEIGHT: f64 = 1e6;
/// Length of the initial coordinate directions, as a fraction of the box.
const INITIAL_STEP: f64 = 0.1;
const BRACKET_EVALS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct PowellOutcome {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub evals: usize,
    pub converged: bool,
    /// Incumbent value after each outer iteration (first entry is `f(x0)`).
    pub history: Vec<f64>,
}

/// Box-constrained problem in unit-cube coordinates. Points outside the
/// box are clamped and charged a quadratic penalty on the violation.
struct Boxed<'a, F> {
    f: &'a F,
    lower: &'a [f64],
    width: Vec<f64>,
    weight: f64,
    evals: usize,
    scratch: Vec<f64>,
}

impl<F: Fn(&[f64]) -> f64> Boxed<'_, F> {
    fn eval(&mut self, u: &[f64]) -> f64 {
        self.evals += 1;
        let mut violation = 0.0;
        for (i, &ui) in u.iter().enumerate() {
            let c = ui.clamp(0.0, 1.0);
            violation += (ui - c).powi(2);
            self.scratch[i] = self.lower[i] + c * self.width[i];
        }
        let v = (self.f)(&self.scratch);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        v + self.weight * violation
    }

    fn to_x(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, &ui)| {
                let x = self.lower[i] + ui.clamp(0.0, 1.0) * self.width[i];
                x.min(self.lower[i] + self.width[i])
            })
            .collect()
    }

    /// Minimizes along `dir` from `p` (value `fp`); moves `p` in place.
    fn line_min(&mut self, p: &mut [f64], dir: &[f64], fp: f64, settings: &OptimizerSettings) -> f64 {
        let base = p.to_vec();
        let mut trial = vec![0.0; p.len()];
        let mut g = |t: f64| {
            for i in 0..base.len() {
                trial[i] = base[i] + t * dir[i];
            }
            self.eval(&trial)
        };
        let Some(((a, b, c), (_, fb, _), _)) = bracket_minimum(&mut g, 0.0, 1.0, fp, BRACKET_EVALS) else {
            return fp;
        };
        let m = brent_from(&mut g, a, b, c, fb, settings);
        // the line search never returns a worse point than its start
        if m.fx < fp {
            for i in 0..p.len() {
                p[i] = base[i] + m.x * dir[i];
            }
            m.fx
        } else {
            fp
        }
    }
}

/// Powell's conjugate direction method on a box.
///
/// Each sweep line-minimizes along every direction in the set, then tries
/// the net displacement of the sweep as a new direction, replacing the
/// direction of largest decrease when Powell's test allows it. Stops when a
/// sweep improves the value by less than `ftol` (relative) or after
/// `max_iters` sweeps. The search runs on the unit cube spanned by the
/// bounds; the returned point always lies inside the box.
pub fn powell_minimize<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    settings: &OptimizerSettings,
) -> Result<PowellOutcome> {
    settings.validate()?;
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::Layout {
            expected: n,
            got: lower.len().min(upper.len()),
        });
    }
    for i in 0..n {
        if !(lower[i].is_finite() && upper[i].is_finite() && lower[i] < upper[i]) {
            return Err(Error::Config(format!("bound {i} is not a finite interval")));
        }
        if !(x0[i] >= lower[i] && x0[i] <= upper[i]) {
            return Err(Error::Validation(format!("start point coordinate {i} = {} outside bounds", x0[i])));
        }
    }
    let f0 = f(x0);
    if !f0.is_finite() {
        return Err(Error::Validation(format!("objective is not finite at the start point ({f0})")));
    }
    let mut boxed = Boxed {
        f,
        lower,
        width: (0..n).map(|i| upper[i] - lower[i]).collect(),
        weight: PENALTY_WEIGHT * f0.abs().max(1.0),
        evals: 1,
        scratch: vec![0.0; n],
    };
    let mut p: Vec<f64> = (0..n).map(|i| (x0[i] - lower[i]) / boxed.width[i]).collect();
    let mut dirs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut d = vec![0.0; n];
            d[i] = INITIAL_STEP;
            d
        })
        .collect();
    let mut fret = f0;
    let mut pt = p.clone();
    let mut history = vec![f0];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < settings.max_iters {
        iterations += 1;
        let fp = fret;
        let mut ibig = 0;
        let mut del = 0.0;
        for (i, dir) in dirs.iter().enumerate() {
            let before = fret;
            fret = boxed.line_min(&mut p, dir, fret, settings);
            if before - fret > del {
                del = before - fret;
                ibig = i;
            }
        }
        history.push(fret);
        if 2.0 * (fp - fret) <= settings.ftol * (fp.abs() + fret.abs()) + TINY {
            converged = true;
            break;
        }
        let ptt: Vec<f64> = (0..n).map(|i| 2.0 * p[i] - pt[i]).collect();
        let xit: Vec<f64> = (0..n).map(|i| p[i] - pt[i]).collect();
        pt.clone_from(&p);
        let fptt = boxed.eval(&ptt);
        if fptt < fp {
            let t = 2.0 * (fp - 2.0 * fret + fptt) * (fp - fret - del).powi(2) - del * (fp - fptt).powi(2);
            if t < 0.0 {
                fret = boxed.line_min(&mut p, &xit, fret, settings);
                dirs[ibig] = dirs[n - 1].clone();
                dirs[n - 1] = xit;
                if let Some(last) = history.last_mut() {
                    *last = fret;
                }
            }
        }
    }

    let x = boxed.to_x(&p);
    let fx = f(&x);
    Ok(PowellOutcome {
        fx,
        x,
        iterations,
        evals: boxed.evals + 1,
        converged,
        history,
    })
}
