//! Natural cubic splines for user-tabulated shaping functions.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Natural cubic spline through `(x_k, y_k)`, extended linearly outside the
/// knot range so that the result stays C¹.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "Knots", into = "Knots"))]
pub struct Spline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

/// Serialized form of a spline: just its knots.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Knots {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl TryFrom<Knots> for Spline {
    type Error = Error;

    fn try_from(k: Knots) -> Result<Self> {
        Spline::new(k.x, k.y)
    }
}

impl From<Spline> for Knots {
    fn from(s: Spline) -> Self {
        Knots { x: s.xs, y: s.ys }
    }
}

impl Spline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err(Error::invalid(format!(
                "a spline needs at least two knots with matching values, got {} and {}",
                n,
                ys.len()
            )));
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("spline knots must be finite"));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("spline abscissae must be strictly increasing"));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // Tridiagonal solve for interior second derivatives.
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            let mut upper = vec![0.0; k];
            for i in 0..k {
                let h0 = xs[i + 1] - xs[i];
                let h1 = xs[i + 2] - xs[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h1 - (ys[i + 1] - ys[i]) / h0);
            }
            for i in 1..k {
                let w = upper[i - 1] / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(Self { xs, ys, m })
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    /// Value and first derivative at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let n = self.xs.len();
        let (lo, hi) = self.domain();
        if x <= lo {
            let (y0, d0) = self.interior(0, lo);
            return (y0 + d0 * (x - lo), d0);
        }
        if x >= hi {
            let (y1, d1) = self.interior(n - 2, hi);
            return (y1 + d1 * (x - hi), d1);
        }
        let k = match self.xs.binary_search_by(|p| p.partial_cmp(&x).unwrap_or(core::cmp::Ordering::Less)) {
            Ok(k) => k.min(n - 2),
            Err(k) => k - 1,
        };
        self.interior(k, x)
    }

    fn interior(&self, k: usize, x: f64) -> (f64, f64) {
        let h = self.xs[k + 1] - self.xs[k];
        let a = (self.xs[k + 1] - x) / h;
        let b = (x - self.xs[k]) / h;
        let (m0, m1) = (self.m[k], self.m[k + 1]);
        let y = a * self.ys[k] + b * self.ys[k + 1] + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let dy = (self.ys[k + 1] - self.ys[k]) / h + (-(3.0 * a * a - 1.0) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        (y, dy)
    }
}
