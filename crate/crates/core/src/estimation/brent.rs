//! Brent's one-dimensional minimizer: golden-section steps safeguarded
//! parabolic interpolation.

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;

const GOLDEN: f64 = 0.381_966_011_250_105_1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrentResult {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
}

/// Minimize `f` inside the bracket `a < b < c` with `f(b) <= min(f(a), f(c))`.
/// `tol` is an absolute tolerance on the abscissa.
pub fn brent_minimize<F>(mut f: F, a: f64, b: f64, c: f64, tol: f64) -> Result<BrentResult>
where
    F: FnMut(f64) -> f64,
{
    if !(a < b && b < c) || !(tol > 0.0) {
        return Err(Error::Argument(format!(
            "invalid bracket ({a}, {b}, {c}) or tolerance {tol}"
        )));
    }
    let (fa, fb, fc) = (f(a), f(b), f(c));
    if !(fb <= fa && fb <= fc) {
        return Err(Error::Argument(format!(
            "f(b) = {fb} does not bracket a minimum (f(a) = {fa}, f(c) = {fc})"
        )));
    }
    Ok(brent_bounded(f, a, c, b, fb, tol))
}

/// Brent iteration on `[lower, upper]` starting from `x0` (which may sit on an
/// endpoint) with known value `f0`. Never returns a point worse than `x0`.
pub(crate) fn brent_bounded<F>(
    mut f: F,
    lower: f64,
    upper: f64,
    x0: f64,
    f0: f64,
    tol: f64,
) -> BrentResult
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (lower, upper);
    let (mut x, mut w, mut v) = (x0, x0, x0);
    let (mut fx, mut fw, mut fv) = (f0, f0, f0);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let tol1 = 0.5 * tol;
    let tol1_at = |x: f64| tol1 + 1e-12 * x.abs();

    for iteration in 0..MAX_ITERATIONS {
        let xm = 0.5 * (a + b);
        let t1 = tol1_at(x);
        let t2 = 2.0 * t1;
        if (x - xm).abs() <= t2 - 0.5 * (b - a) {
            return BrentResult {
                x,
                fx,
                iterations: iteration,
            };
        }

        let mut golden = true;
        if e.abs() > t1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            if !(p.abs() >= (0.5 * q * e_prev).abs() || p <= q * (a - x) || p >= q * (b - x)) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < t2 || b - u < t2 {
                    d = t1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }

        let u = if d.abs() >= t1 { x + d } else { x + t1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, w, x) = (w, x, u);
            (fv, fw, fx) = (fw, fx, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, w) = (w, u);
                (fv, fw) = (fw, fu);
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    BrentResult {
        x,
        fx,
        iterations: MAX_ITERATIONS,
    }
}
