//! Explicit Runge–Kutta steppers for autonomous and non-autonomous ODEs.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::math::sqrt;

/// A first-order system `y' = f(t, y)`.
pub trait OdeSystem {
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

impl<F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>> OdeSystem for F {
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self(t, y, dy)
    }
}

/// Time-stepping method.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum Method {
    /// Classical fourth-order Runge–Kutta with a fixed step.
    Rk4,
    /// Dormand–Prince 5(4) with error control.
    Rk45 { rtol: f64, atol: f64 },
}

/// Classical RK4 with reusable stage buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self { k: [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]], tmp: vec![0.0; dim] }
    }

    /// Advances `y` from `t` by `h` into `out`.
    pub fn step<S: OdeSystem>(&mut self, sys: &mut S, t: f64, y: &[f64], h: f64, out: &mut [f64]) -> Result<()> {
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        sys.rhs(t, y, k1)?;
        for i in 0..y.len() {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        sys.rhs(t + 0.5 * h, tmp, k2)?;
        for i in 0..y.len() {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        sys.rhs(t + 0.5 * h, tmp, k3)?;
        for i in 0..y.len() {
            tmp[i] = y[i] + h * k3[i];
        }
        sys.rhs(t + h, tmp, k4)?;
        for i in 0..y.len() {
            out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B_LOW: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// Dormand–Prince 5(4) stepper.
#[derive(Debug, Clone)]
pub struct DormandPrince {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
}

impl DormandPrince {
    pub fn new(dim: usize) -> Self {
        Self { k: core::array::from_fn(|_| vec![0.0; dim]), tmp: vec![0.0; dim] }
    }

    /// Attempts one step of size `h`, writing the fifth-order solution to
    /// `out`. Returns the RMS error norm scaled by `atol + rtol·|y|`; the step
    /// is acceptable when it is at most 1.
    pub fn step<S: OdeSystem>(
        &mut self,
        sys: &mut S,
        t: f64,
        y: &[f64],
        h: f64,
        rtol: f64,
        atol: f64,
        out: &mut [f64],
    ) -> Result<f64> {
        let dim = y.len();
        for s in 0..7 {
            for i in 0..dim {
                let mut acc = y[i];
                for (r, a) in A[s].iter().enumerate().take(s) {
                    acc += h * a * self.k[r][i];
                }
                self.tmp[i] = acc;
            }
            sys.rhs(t + C[s] * h, &self.tmp, &mut self.k[s])?;
        }
        let mut err2 = 0.0;
        for i in 0..dim {
            let mut hi = y[i];
            let mut lo = y[i];
            for s in 0..7 {
                hi += h * B[s] * self.k[s][i];
                lo += h * B_LOW[s] * self.k[s][i];
            }
            out[i] = hi;
            let scale = atol + rtol * y[i].abs().max(hi.abs());
            let e = (hi - lo) / scale;
            err2 += e * e;
        }
        Ok(sqrt(err2 / dim.max(1) as f64))
    }
}

/// Step-size factor after an attempt with error norm `err`.
pub fn step_factor(err: f64) -> f64 {
    if err == 0.0 {
        return 5.0;
    }
    (0.9 * libm::pow(err, -0.2)).clamp(0.2, 5.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn decay(_t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        dy[0] = -y[0];
        dy[1] = y[0] - 0.5 * y[1];
        Ok(())
    }

    fn exact(t: f64) -> [f64; 2] {
        let a = libm::exp(-t);
        [a, 2.0 * (libm::exp(-0.5 * t) - a)]
    }

    fn rk4_error(h: f64) -> f64 {
        let mut rk = Rk4::new(2);
        let mut y = [1.0, 0.0];
        let mut out = [0.0; 2];
        let steps = libm::round(2.0 / h) as usize;
        let mut sys = decay;
        for k in 0..steps {
            rk.step(&mut sys, k as f64 * h, &y, h, &mut out).unwrap();
            y = out;
        }
        let e = exact(2.0);
        (y[0] - e[0]).abs().max((y[1] - e[1]).abs())
    }

    #[test]
    fn rk4_is_fourth_order() {
        let ratio = rk4_error(0.1) / rk4_error(0.05);
        assert!((14.0..18.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn dormand_prince_controls_error() {
        let mut dp = DormandPrince::new(2);
        let mut sys = decay;
        let (mut t, mut h) = (0.0_f64, 0.1_f64);
        let mut y = [1.0, 0.0];
        let mut out = [0.0; 2];
        while t < 2.0 {
            h = h.min(2.0 - t);
            let err = dp.step(&mut sys, t, &y, h, 1e-9, 1e-12, &mut out).unwrap();
            if err <= 1.0 {
                t += h;
                y = out;
            }
            h *= step_factor(err);
        }
        let e = exact(2.0);
        assert_relative_eq!(y[0], e[0], max_relative = 1e-7);
        assert_relative_eq!(y[1], e[1], max_relative = 1e-7);
    }

    #[test]
    fn dormand_prince_is_exact_for_polynomials() {
        let mut dp = DormandPrince::new(1);
        let mut sys = |t: f64, _y: &[f64], dy: &mut [f64]| -> Result<()> {
            dy[0] = 5.0 * t * t * t * t;
            Ok(())
        };
        let mut out = [0.0];
        dp.step(&mut sys, 0.0, &[0.0], 1.0, 1e-6, 1e-9, &mut out).unwrap();
        assert_relative_eq!(out[0], 1.0, max_relative = 1e-14);
    }
}
