//! Scalar root finding: bracketed Newton with bisection fallback.

use crate::error::{Error, Result};

/// Solves f(x) = 0 on [lo, hi] for a function with a sign change, given
/// `fd(x) = (f(x), f'(x))`. Newton steps are accepted only when they stay
/// inside the current bracket; otherwise the bracket is bisected.
pub fn newton_bisect<F>(fd: F, lo: f64, hi: f64, xtol: f64, max_iter: usize) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    let (flo, _) = fd(lo);
    let (fhi, _) = fd(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::NoConvergence(format!("no sign change on [{lo}, {hi}]")));
    }
    let increasing = fhi > flo;
    let (mut a, mut b) = (lo, hi);
    let mut x = 0.5 * (a + b);
    for _ in 0..max_iter {
        let (fx, dfx) = fd(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if (fx > 0.0) == increasing {
            b = x;
        } else {
            a = x;
        }
        let newton = x - fx / dfx;
        let next = if dfx != 0.0 && newton > a && newton < b { newton } else { 0.5 * (a + b) };
        if (next - x).abs() <= xtol || (b - a) <= xtol {
            return Ok(next);
        }
        x = next;
    }
    Err(Error::NoConvergence(format!("no convergence on [{lo}, {hi}] after {max_iter} iterations")))
}

/// Plain bisection for f(x) = 0 on [lo, hi] with a sign change.
pub fn bisect<F>(f: F, lo: f64, hi: f64, xtol: f64, max_iter: usize) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoConvergence(format!("no sign change on [{lo}, {hi}]")));
    }
    let neg_at_a = fa < 0.0;
    for _ in 0..max_iter {
        let m = 0.5 * (a + b);
        if b - a <= xtol || m == a || m == b {
            return Ok(m);
        }
        let fm = f(m);
        if fm == 0.0 {
            return Ok(m);
        }
        if (fm < 0.0) == neg_at_a {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}
