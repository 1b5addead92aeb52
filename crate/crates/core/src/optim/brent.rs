use super::OptimizerSettings;
use crate::error::{Error, Result};

const CGOLD: f64 = 0.381_966_011_250_105_1;
const GOLD: f64 = 1.618_033_988_749_895;
const GROW_LIMIT: f64 = 100.0;
/// Absolute floor added to the relative location tolerance.
pub(crate) const XTOL_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineMin {
    pub x: f64,
    pub fx: f64,
    pub evals: usize,
    pub converged: bool,
}

fn sane(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Brent's method on a bracketing triple `(a, b, c)` with `f(b)` below
/// both `f(a)` and `f(c)`.
///
/// Stops once the minimizer is located to `xtol * |x| + 1e-10`. Running out
/// of `max_line_evals` returns the best point seen with `converged = false`.
pub fn brent_line_min<F: FnMut(f64) -> f64>(
    mut f: F,
    bracket: (f64, f64, f64),
    settings: &OptimizerSettings,
) -> Result<LineMin> {
    let (a, b, c) = bracket;
    let inside = (a < b && b < c) || (c < b && b < a);
    if !inside || ![a, b, c].iter().all(|v| v.is_finite()) {
        return Err(Error::Bracket { a, b, c });
    }
    let fa = sane(f(a));
    let fb = sane(f(b));
    let fc = sane(f(c));
    if !(fb < fa && fb < fc) {
        return Err(Error::Bracket { a, b, c });
    }
    let mut out = brent_from(&mut f, a, b, c, fb, settings);
    out.evals += 3;
    Ok(out)
}

/// Brent's inner loop given an already validated bracket and `f(b)`.
pub(crate) fn brent_from<F: FnMut(f64) -> f64>(
    f: &mut F,
    ax: f64,
    bx: f64,
    cx: f64,
    fbx: f64,
    settings: &OptimizerSettings,
) -> LineMin {
    let (mut a, mut b) = if ax < cx { (ax, cx) } else { (cx, ax) };
    let (mut x, mut w, mut v) = (bx, bx, bx);
    let (mut fx, mut fw, mut fv) = (fbx, fbx, fbx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let mut evals = 0;

    while evals < settings.max_line_evals {
        let xm = 0.5 * (a + b);
        let tol1 = 0.5 * (settings.xtol * x.abs() + XTOL_FLOOR);
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            return LineMin {
                x,
                fx,
                evals,
                converged: true,
            };
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            if p.is_finite() && q.is_finite() && p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x)
            {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = sane(f(u));
        evals += 1;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    LineMin {
        x,
        fx,
        evals,
        converged: false,
    }
}

/// Downhill search for a bracketing triple starting from `a` and `b`.
///
/// Returns `((a, b, c), (fa, fb, fc), evals)`; `None` if the function kept
/// decreasing for `max_evals` evaluations.
pub fn bracket_minimum<F: FnMut(f64) -> f64>(
    mut f: F,
    a0: f64,
    b0: f64,
    fa0: f64,
    max_evals: usize,
) -> Option<((f64, f64, f64), (f64, f64, f64), usize)> {
    let (mut a, mut b) = (a0, b0);
    let mut fa = sane(fa0);
    let mut fb = sane(f(b));
    let mut evals = 1;
    if fb > fa {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = b + GOLD * (b - a);
    let mut fc = sane(f(c));
    evals += 1;
    while fb >= fc {
        if evals >= max_evals {
            return None;
        }
        let r = (b - a) * (fb - fc);
        let q = (b - c) * (fb - fa);
        let denom = 2.0 * (q - r).abs().max(1e-20).copysign(q - r);
        let mut u = b - ((b - c) * q - (b - a) * r) / denom;
        let ulim = b + GROW_LIMIT * (c - b);
        let mut fu;
        if !u.is_finite() {
            u = c + GOLD * (c - b);
            fu = sane(f(u));
            evals += 1;
        } else if (b - u) * (u - c) > 0.0 {
            fu = sane(f(u));
            evals += 1;
            if fu < fc {
                return Some(((b, u, c), (fb, fu, fc), evals));
            } else if fu > fb {
                return Some(((a, b, u), (fa, fb, fu), evals));
            }
            u = c + GOLD * (c - b);
            fu = sane(f(u));
            evals += 1;
        } else if (c - u) * (u - ulim) > 0.0 {
            fu = sane(f(u));
            evals += 1;
            if fu < fc {
                b = c;
                c = u;
                u = c + GOLD * (c - b);
                fb = fc;
                fc = fu;
                fu = sane(f(u));
                evals += 1;
            }
        } else if (u - ulim) * (ulim - c) >= 0.0 {
            u = ulim;
            fu = sane(f(u));
            evals += 1;
        } else {
            u = c + GOLD * (c - b);
            fu = sane(f(u));
            evals += 1;
        }
        a = b;
        b = c;
        c = u;
        fa = fb;
        fb = fc;
        fc = fu;
    }
    Some(((a, b, c), (fa, fb, fc), evals))
}
