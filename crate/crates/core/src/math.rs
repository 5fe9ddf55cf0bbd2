//! Small numerical helpers built on `libm`.

pub use libm::{acos, atan, cos, exp, fabs, log, sin, sqrt};

/// Largest finite value accepted when bracketing a blow-up.
pub const BRACKET_CAP: f64 = 1e12;
/// Absolute tolerance of the bisection solvers.
pub const BISECT_TOL: f64 = 1e-10;
/// Iteration cap of the bisection solvers.
pub const BISECT_MAX_ITER: usize = 200;

/// Bisection on `[lo, hi]` for a sign change of `f`.
///
/// Returns the final bracket `(lo, hi)`; `f(lo)` keeps the sign it had on
/// entry. Callers pick whichever end is conservative for them.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let lo_sign = f(lo) > 0.0;
    for _ in 0..BISECT_MAX_ITER {
        if hi - lo <= BISECT_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// Square of `x`.
#[inline]
pub fn sq(x: f64) -> f64 {
    x * x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_finds_sqrt_two() {
        let (lo, hi) = bisect(|x| x * x - 2.0, 0.0, 2.0);
        assert!(lo * lo <= 2.0 && hi * hi >= 2.0);
        assert!(hi - lo <= BISECT_TOL);
    }

    #[test]
    fn bisect_keeps_lower_sign() {
        let (lo, _) = bisect(|x| 1.0 - x, 0.0, 3.0);
        assert!(1.0 - lo > 0.0);
    }
}
