//! The two control Lyapunov functions, their gradients, the closed-loop
//! dissipation rates and the size-function bounds obtained by inverting
//! each energy term.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::{distance, FleetState};
use crate::interact::candidate_pairs;
use crate::math::{bisect, cos, sin, sq, BRACKET_CAP};
use crate::model::Model;

/// Constants shared by the energies and the controllers.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ClfParams {
    /// Heading penalty weight `A > 0`.
    #[cfg_attr(feature = "serde", serde(rename = "A"))]
    pub a_penalty: f64,
    /// Lateral kinetic weight, `b > 1 - v*/v_max`.
    pub b: f64,
}

impl Default for ClfParams {
    fn default() -> Self {
        Self { a_penalty: 1.0, b: 1.0 }
    }
}

/// Rejects states outside the per-vehicle bounds of the admissible set.
/// Pair separations are checked where the pair potential is evaluated.
pub(crate) fn check_vehicles(model: &Model, state: &FleetState) -> Result<()> {
    if state.n() != model.n() || model.pairs.n() != model.n() {
        return Err(Error::invalid(format!(
            "state has {} vehicles, model has {}",
            state.n(),
            model.n()
        )));
    }
    let road = &model.road;
    for i in 0..state.n() {
        let (y, th, v) = (state.y()[i], state.theta()[i], state.v()[i]);
        if !(y.abs() < road.half_width && th.abs() < road.phi && v > 0.0 && v < road.v_max) {
            return Err(Error::domain(format!(
                "vehicle {} is outside the admissible set (y = {y}, theta = {th}, v = {v})",
                i + 1
            )));
        }
    }
    Ok(())
}

fn penalty(model: &Model, theta: f64) -> (f64, f64) {
    let a = model.clf.a_penalty;
    let cphi = cos(model.road.phi);
    let gap = cos(theta) - cphi;
    (a * (1.0 / gap - 1.0 / (1.0 - cphi)), a * sin(theta) / (gap * gap))
}

/// Boundary, pair and heading-penalty terms common to both energies.
fn potential_energy(model: &Model, state: &FleetState) -> Result<f64> {
    let n = state.n();
    let (x, y, th) = (state.x(), state.y(), state.theta());
    let mut total = 0.0;
    for i in 0..n {
        total += model.suite.eval_u(y[i], model.road.half_width)?.0;
        total += penalty(model, th[i]).0;
    }
    let mut pairs = Vec::new();
    candidate_pairs(x, model.suite.lambda, &mut pairs);
    for &(i, j) in &pairs {
        let d = distance(x[i] - x[j], y[i] - y[j], model.pairs.p(i, j));
        total += model.suite.eval_v(d, model.pairs.l(i, j))?.0;
    }
    Ok(total)
}

/// Newtonian kinetic term of one vehicle.
fn kinetic(model: &Model, theta: f64, v: f64) -> f64 {
    let (s, c) = (sin(theta), cos(theta));
    0.5 * sq(v * c - model.road.v_star) + 0.5 * model.clf.b * sq(v * s)
}

/// Pseudo-relativistic kinetic term of one vehicle.
fn kinetic_r(model: &Model, theta: f64, v: f64) -> f64 {
    let (s, c) = (sin(theta), cos(theta));
    let num = sq(v * c - model.road.v_star) + model.clf.b * sq(v * s);
    num / (2.0 * (model.road.v_max - v) * v)
}

/// Total mechanical energy `H` used by the Newtonian controller.
pub fn eval_h(model: &Model, state: &FleetState) -> Result<f64> {
    check_vehicles(model, state)?;
    let kin: f64 = (0..state.n()).map(|i| kinetic(model, state.theta()[i], state.v()[i])).sum();
    Ok(kin + potential_energy(model, state)?)
}

/// Pseudo-relativistic energy `H_R` used by the PRCC.
pub fn eval_h_r(model: &Model, state: &FleetState) -> Result<f64> {
    check_vehicles(model, state)?;
    let kin: f64 = (0..state.n()).map(|i| kinetic_r(model, state.theta()[i], state.v()[i])).sum();
    Ok(kin + potential_energy(model, state)?)
}

/// The energy a controller is designed to decrease: `H` for NCC, `H_R` for
/// PRCC.
pub fn eval_clf(model: &Model, state: &FleetState) -> Result<f64> {
    match model.controller {
        crate::Controller::Ncc { .. } => eval_h(model, state),
        crate::Controller::Prcc => eval_h_r(model, state),
    }
}

/// Gradient of the shared potential terms, laid out like the state.
fn potential_gradient(model: &Model, state: &FleetState) -> Result<Vec<f64>> {
    let n = state.n();
    let (x, y, th) = (state.x(), state.y(), state.theta());
    let mut g = vec![0.0; 4 * n];
    let mut pairs = Vec::new();
    candidate_pairs(x, model.suite.lambda, &mut pairs);
    for &(i, j) in &pairs {
        let p = model.pairs.p(i, j);
        let (dx, dy) = (x[i] - x[j], y[i] - y[j]);
        let d = distance(dx, dy, p);
        let dv = model.suite.eval_v(d, model.pairs.l(i, j))?.1;
        g[i] += dv * dx / d;
        g[j] -= dv * dx / d;
        g[n + i] += p * dv * dy / d;
        g[n + j] -= p * dv * dy / d;
    }
    for i in 0..n {
        g[n + i] += model.suite.eval_u(y[i], model.road.half_width)?.1;
        g[2 * n + i] += penalty(model, th[i]).1;
    }
    Ok(g)
}

/// Analytic gradient of `H`.
pub fn grad_h(model: &Model, state: &FleetState) -> Result<Vec<f64>> {
    check_vehicles(model, state)?;
    let n = state.n();
    let mut g = potential_gradient(model, state)?;
    let (b, vs) = (model.clf.b, model.road.v_star);
    for i in 0..n {
        let (th, v) = (state.theta()[i], state.v()[i]);
        let (s, c) = (sin(th), cos(th));
        g[2 * n + i] += v * s * (vs + (b - 1.0) * v * c);
        g[3 * n + i] += (v * c - vs) * c + b * v * s * s;
    }
    Ok(g)
}

/// Analytic gradient of `H_R`.
pub fn grad_h_r(model: &Model, state: &FleetState) -> Result<Vec<f64>> {
    check_vehicles(model, state)?;
    let n = state.n();
    let mut g = potential_gradient(model, state)?;
    let (b, vs, vm) = (model.clf.b, model.road.v_star, model.road.v_max);
    for i in 0..n {
        let (th, v) = (state.theta()[i], state.v()[i]);
        let (s, c) = (sin(th), cos(th));
        let den = (vm - v) * v;
        let num = sq(v * c - vs) + b * sq(v * s);
        g[2 * n + i] += s * (vs + (b - 1.0) * v * c) / (vm - v);
        g[3 * n + i] += ((v * c - vs) * c + b * v * s * s) / den - num * (vm - 2.0 * v) / (2.0 * den * den);
    }
    Ok(g)
}

/// Viscous part shared by both dissipation rates:
/// `½ ΣΣ κ ((s_j - s_i)(g2(s_j) - g2(s_i)) + (c_j - c_i)(g1(c_j) - g1(c_i)))`
/// with `c = v cos θ`, `s = v sin θ`.
fn viscous_dissipation(model: &Model, state: &FleetState) -> Result<f64> {
    if model.suite.is_inviscid() {
        return Ok(0.0);
    }
    let n = state.n();
    let (x, y, th, v) = (state.x(), state.y(), state.theta(), state.v());
    let cv: Vec<f64> = (0..n).map(|i| v[i] * cos(th[i])).collect();
    let sv: Vec<f64> = (0..n).map(|i| v[i] * sin(th[i])).collect();
    let mut pairs = Vec::new();
    candidate_pairs(x, model.suite.lambda, &mut pairs);
    let mut total = 0.0;
    for &(i, j) in &pairs {
        let d = distance(x[i] - x[j], y[i] - y[j], model.pairs.p(i, j));
        let k = model.suite.eval_kappa(d, model.pairs.l(i, j))?;
        if k == 0.0 {
            continue;
        }
        let dc = (cv[j] - cv[i]) * (model.suite.g1.value(cv[j]) - model.suite.g1.value(cv[i]));
        let ds = (sv[j] - sv[i]) * (model.suite.g2.value(sv[j]) - model.suite.g2.value(sv[i]));
        total += k * (dc + ds);
    }
    Ok(total)
}

/// Dissipation rate `Δ = -dH_R/dt` of the PRCC closed loop.
pub fn dissipation_delta(model: &Model, state: &FleetState) -> Result<f64> {
    check_vehicles(model, state)?;
    let vs = model.road.v_star;
    let mut total = 0.0;
    for i in 0..state.n() {
        let (th, v) = (state.theta()[i], state.v()[i]);
        let (e, l) = (v * cos(th) - vs, v * sin(th));
        total += e * model.suite.f1.value(e) + l * model.suite.f2.value(l);
    }
    Ok(total + viscous_dissipation(model, state)?)
}

/// Lower bound `Γ` on `-dH/dt` for the NCC closed loop with gains `μ1, μ2`.
pub fn dissipation_gamma(model: &Model, mu1: f64, mu2: f64, state: &FleetState) -> Result<f64> {
    check_vehicles(model, state)?;
    let vs = model.road.v_star;
    let mut total = 0.0;
    for i in 0..state.n() {
        let (th, v) = (state.theta()[i], state.v()[i]);
        total += mu2 * sq(v * cos(th) - vs) + mu1 * sq(v * sin(th));
    }
    Ok(total + viscous_dissipation(model, state)?)
}

/// The dissipation rate recorded for the model's controller.
pub fn dissipation(model: &Model, state: &FleetState) -> Result<f64> {
    match model.controller {
        crate::Controller::Ncc { mu1, mu2 } => dissipation_gamma(model, mu1, mu2, state),
        crate::Controller::Prcc => dissipation_delta(model, state),
    }
}

/// `(v - v*)^2 / ((v_max - v) v)`, which bounds twice the PRCC kinetic term
/// from below.
pub fn speed_size(v: f64, v_star: f64, v_max: f64) -> f64 {
    sq(v - v_star) / ((v_max - v) * v)
}

/// Bounds implied by an energy level `s`: every admissible state with
/// energy at most `s` satisfies `|θ_i| <= omega`, `|y_i| <= eta[i]`,
/// `d_ij >= rho(i, j)` and, for `H_R`, `ell1 <= v_i <= ell2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeBounds {
    pub level: f64,
    pub omega: f64,
    pub eta: Vec<f64>,
    rho: Vec<f64>,
    n: usize,
    pub ell1: f64,
    pub ell2: f64,
}

impl SizeBounds {
    pub fn rho(&self, i: usize, j: usize) -> f64 {
        self.rho[i * self.n + j]
    }
}

/// Smallest `t` in `[start, end)` along `start + (end - start)(1 - 10^-k)`
/// where `f` exceeds `s`, or the last probe if `f` stays below.
fn blowup_bracket<F: Fn(f64) -> Option<f64>>(f: F, start: f64, end: f64, s: f64) -> f64 {
    let mut probe = start;
    for k in 1..=15 {
        probe = start + (end - start) * (1.0 - libm::pow(10.0, -(k as f64)));
        match f(probe) {
            Some(val) if val > s || val > BRACKET_CAP => return probe,
            Some(_) => {}
            None => return probe,
        }
    }
    probe
}

/// Inverts each energy term at level `s`.
pub fn size_bounds(model: &Model, s: f64) -> Result<SizeBounds> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::domain(format!("energy level must be finite and nonnegative, got {s}")));
    }
    let n = model.n();
    let road = &model.road;
    let lambda = model.suite.lambda;

    let omega = if s == 0.0 {
        0.0
    } else {
        let f = |t: f64| penalty(model, t).0;
        let hi = blowup_bracket(|t| Some(f(t)), 0.0, road.phi, s);
        if f(hi) <= s {
            hi
        } else {
            bisect(|t| f(t) - s, 0.0, hi).1
        }
    };

    let a = road.half_width;
    let flat = model.suite.boundary.flat_half_width(a);
    let u = |y: f64| model.suite.eval_u(y, a).map(|r| r.0).ok();
    let eta_one = {
        let hi = blowup_bracket(u, flat, a, s);
        match u(hi) {
            Some(val) if val > s => bisect(|y| u(y).unwrap_or(f64::INFINITY) - s, flat, hi).1,
            _ => hi,
        }
    };
    let eta = vec![eta_one; n];

    let mut rho = vec![f64::NAN; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let l = model.pairs.l(i, j);
            let val = if s == 0.0 || !(lambda > l) {
                lambda.max(l)
            } else {
                let v = |d: f64| model.suite.eval_v(d, l).map(|r| r.0).ok();
                // Walk from λ towards L until V exceeds s.
                let lo = blowup_bracket(|t| v(lambda - t), 0.0, lambda - l, s);
                let lo = lambda - lo;
                match v(lo) {
                    Some(val) if val > s => bisect(|d| v(d).unwrap_or(f64::INFINITY) - s, lo, lambda).0,
                    _ => lo,
                }
            };
            rho[i * n + j] = val;
            rho[j * n + i] = val;
        }
    }

    let (vs, vm) = (road.v_star, road.v_max);
    let target = 2.0 * s;
    let f = |v: f64| speed_size(v, vs, vm);
    let (ell1, ell2) = if s == 0.0 {
        (vs, vs)
    } else {
        let lo = vs - blowup_bracket(|t| Some(f(vs - t)), 0.0, vs, target);
        let ell1 = if f(lo) > target { bisect(|v| f(v) - target, lo, vs).0 } else { lo };
        let hi = blowup_bracket(|v| Some(f(v)), vs, vm, target);
        let ell2 = if f(hi) > target { bisect(|v| f(v) - target, vs, hi).1 } else { hi };
        (ell1, ell2)
    };

    Ok(SizeBounds { level: s, omega, eta, rho, n, ell1, ell2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_relative_eq;

    fn state(x: &[f64], y: &[f64], th: &[f64], v: &[f64]) -> FleetState {
        FleetState::from_components(x, y, th, v).unwrap()
    }

    fn model(n: usize) -> Model {
        let mut m = presets::prcc_viscous();
        m.vehicles.truncate(n);
        m.pairs = crate::fleet::PairMatrix::uniform(n, presets::LATERAL_WEIGHT, presets::MIN_SEPARATION);
        m
    }

    #[test]
    fn equilibrium_has_zero_energy() {
        let m = model(3);
        let s = state(&[0.0, 30.0, 60.0], &[0.0, 1.0, -2.0], &[0.0; 3], &[30.0; 3]);
        assert_eq!(eval_h(&m, &s).unwrap(), 0.0);
        assert_eq!(eval_h_r(&m, &s).unwrap(), 0.0);
        assert!(grad_h(&m, &s).unwrap().iter().all(|g| *g == 0.0));
        assert!(grad_h_r(&m, &s).unwrap().iter().all(|g| *g == 0.0));
        assert_eq!(dissipation_delta(&m, &s).unwrap(), 0.0);
    }

    #[test]
    fn close_pair_contributes_one_potential() {
        let m = model(2);
        let s = state(&[0.0, 10.0], &[0.0; 2], &[0.0; 2], &[30.0; 2]);
        let v = m.suite.eval_v(10.0, presets::MIN_SEPARATION).unwrap().0;
        assert_relative_eq!(eval_h(&m, &s).unwrap(), v, max_relative = 1e-15);
    }

    #[test]
    fn relativistic_kinetic_example() {
        let m = model(1);
        let s = state(&[0.0], &[0.0], &[0.0], &[15.0]);
        assert_relative_eq!(eval_h_r(&m, &s).unwrap(), 0.375, max_relative = 1e-14);
        let fast = state(&[0.0], &[0.0], &[0.0], &[35.0 - 1e-9]);
        assert!(eval_h_r(&m, &fast).unwrap() > 1e6);
    }

    #[test]
    fn outside_state_space_is_a_domain_error() {
        let m = model(1);
        assert!(eval_h(&m, &state(&[0.0], &[0.0], &[0.3], &[30.0])).is_err());
        let m2 = model(2);
        assert!(eval_h(&m2, &state(&[0.0, 1.0], &[0.0; 2], &[0.0; 2], &[30.0; 2])).is_err());
    }

    #[test]
    fn dissipation_with_equal_speeds() {
        let m = model(3);
        let s = state(&[0.0, 10.0, 20.0], &[0.0; 3], &[0.0; 3], &[25.0; 3]);
        let mu2 = 1.0 / (35.0 * 35.0);
        assert_relative_eq!(dissipation_delta(&m, &s).unwrap(), 3.0 * (-5.0) * mu2 * (-5.0), max_relative = 1e-14);
        assert_relative_eq!(dissipation_gamma(&m, 0.4, 0.1, &s).unwrap(), 3.0 * 0.1 * 25.0, max_relative = 1e-14);
    }

    #[test]
    fn size_bounds_at_zero_level() {
        let m = model(3);
        let b = size_bounds(&m, 0.0).unwrap();
        assert_eq!(b.omega, 0.0);
        assert_eq!((b.ell1, b.ell2), (30.0, 30.0));
        assert_eq!(b.rho(0, 2), 25.0);
        assert_relative_eq!(b.eta[0], m.suite.boundary.flat_half_width(7.2), epsilon = 1e-9);
        assert!(size_bounds(&m, -1.0).is_err());
    }

    #[test]
    fn speed_bounds_invert_the_size_function() {
        let m = model(2);
        let b = size_bounds(&m, 0.375).unwrap();
        let f = |v| speed_size(v, 30.0, 35.0);
        assert!((f(b.ell1) - 0.75).abs() < 1e-9);
        assert!((f(b.ell2) - 0.75).abs() < 1e-9);
        assert!(b.ell1 < 30.0 && b.ell2 > 30.0);
    }

    #[test]
    fn size_bounds_are_monotone() {
        let m = model(2);
        let mut prev = size_bounds(&m, 0.0).unwrap();
        for s in [1e-6, 1e-3, 0.1, 1.0, 10.0, 1e3] {
            let b = size_bounds(&m, s).unwrap();
            assert!(b.omega >= prev.omega && b.eta[0] >= prev.eta[0]);
            assert!(b.rho(0, 1) <= prev.rho(0, 1));
            assert!(b.ell1 <= prev.ell1 && b.ell2 >= prev.ell2);
            assert!(b.rho(0, 1) > presets::MIN_SEPARATION && b.omega < presets::PHI);
            prev = b;
        }
    }
}
