//! Scalar root finding on a sign-changing bracket.

use crate::error::{Error, Result};

const MAX_ITER: usize = 400;

/// Brent's method (inverse quadratic interpolation safeguarded by bisection).
///
/// `f(lo)` and `f(hi)` must differ in sign (a zero at an endpoint is
/// returned directly). Iterates until the bracket is below
/// `2 eps |x| + xtol / 2`, so `xtol = 0` runs to machine precision.
/// A root at exactly zero stops at `eps^2` times the bracket scale
/// instead of chasing subnormals.
pub fn brent<F>(f: F, lo: f64, hi: f64, xtol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.is_nan() || fb.is_nan() || fa.signum() == fb.signum() {
        return Err(Error::NoBracket { what: "f", lo, hi });
    }

    let floor = f64::EPSILON * f64::EPSILON * lo.abs().max(hi.abs());
    let mut c = b;
    let mut fc = fb;
    let mut d = 0.0;
    let mut e = 0.0;
    for _ in 0..MAX_ITER {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol + floor;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let rr = fb / fc;
                p = s * (2.0 * xm * qq * (qq - rr) - (b - a) * (rr - 1.0));
                q = (qq - 1.0) * (rr - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
        if fb.is_nan() {
            return Err(Error::NoConvergence(format!("function returned NaN at {b}")));
        }
    }
    Err(Error::NoConvergence(format!("Brent iteration limit on [{lo}, {hi}]")))
}

/// Grows `hi` geometrically away from `lo` until `f(hi) > 0`.
pub fn expand_until_positive<F>(f: F, lo: f64, start: f64, limit: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let mut hi = start.max(lo + 1e-3);
    loop {
        if f(hi) > 0.0 {
            return Ok(hi);
        }
        if hi >= limit {
            return Err(Error::NoBracket { what: "expanding bracket", lo, hi });
        }
        hi = (lo + 2.0 * (hi - lo)).min(limit);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_simple_roots() {
        let r = brent(|x| x * x - 2.0, 0.0, 2.0, 0.0).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 4e-16);
        let r = brent(|x: f64| x.cos() - x, 0.0, 1.0, 0.0).unwrap();
        assert!((r.cos() - r).abs() < 1e-15);
        let r = brent(|x: f64| (x - 1e-3).powi(3), -1.0, 1.0, 0.0).unwrap();
        assert!((r - 1e-3).abs() < 1e-5);
    }

    #[test]
    fn sign_step_at_zero_terminates() {
        // Only bisection makes progress, and the relative tolerance vanishes at 0.
        let r = brent(|x: f64| if x < 0.0 { -1.0 } else { 1.0 }, -0.55, 1e-3, 0.0).unwrap();
        assert!(r.abs() < 1e-30, "{r:e}");
    }

    #[test]
    fn endpoint_zero_and_bad_bracket() {
        assert_eq!(brent(|x| x, 0.0, 1.0, 0.0).unwrap(), 0.0);
        assert!(matches!(brent(|x| x * x + 1.0, -1.0, 1.0, 0.0), Err(Error::NoBracket { .. })));
    }

    #[test]
    fn expansion() {
        let hi = expand_until_positive(|x| x - 100.0, 0.0, 1.0, 1e6).unwrap();
        assert!(hi > 100.0);
        assert!(expand_until_positive(|_| -1.0, 0.0, 1.0, 10.0).is_err());
    }
}
