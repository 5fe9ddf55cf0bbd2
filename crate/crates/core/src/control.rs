//! The Newtonian (NCC) and pseudo-relativistic (PRCC) cruise controllers.
//!
//! All controls are computed from one immutable state snapshot. For each
//! vehicle `F_i` is evaluated first because `u_i` depends on it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::energy::{check_vehicles, ClfParams};
use crate::error::{Error, Result};
use crate::fleet::{distance, ControlVector, FleetState, RoadSpec, Violation};
use crate::interact::candidate_pairs;
use crate::math::{cos, sin};
use crate::model::{Controller, Model};
use crate::potential::PotentialSuite;

fn check_speed_heading(road: &RoadSpec, v: f64, theta: f64) -> Result<()> {
    if !(v > 0.0 && v < road.v_max && theta.abs() < road.phi) {
        return Err(Error::domain(format!("need 0 < v < v_max and |theta| < phi, got v = {v}, theta = {theta}")));
    }
    Ok(())
}

/// PRCC inertia `q(v, θ)`.
pub fn prcc_q(road: &RoadSpec, v: f64, theta: f64) -> Result<f64> {
    check_speed_heading(road, v, theta)?;
    Ok(q_unchecked(road, v, cos(theta)))
}

#[inline]
fn q_unchecked(road: &RoadSpec, v: f64, c: f64) -> f64 {
    let (vm, vs) = (road.v_max, road.v_star);
    (vm * v * c + vs * vm - 2.0 * vs * v) / (2.0 * (vm - v) * (vm - v) * v * v)
}

/// PRCC heading inertia `β(v, θ)`.
pub fn prcc_beta(road: &RoadSpec, clf: &ClfParams, v: f64, theta: f64) -> Result<f64> {
    check_speed_heading(road, v, theta)?;
    Ok(beta_unchecked(road, clf, v, cos(theta)))
}

#[inline]
fn beta_unchecked(road: &RoadSpec, clf: &ClfParams, v: f64, c: f64) -> f64 {
    let gap = c - cos(road.phi);
    clf.a_penalty / (gap * gap) + ((clf.b - 1.0) * v * c + road.v_star) / (road.v_max - v)
}

/// PRCC coupling `a(v, θ)` between acceleration and heading rate.
pub fn prcc_a(road: &RoadSpec, clf: &ClfParams, v: f64, theta: f64) -> Result<f64> {
    check_speed_heading(road, v, theta)?;
    Ok(a_unchecked(road, clf, v, sin(theta)))
}

#[inline]
fn a_unchecked(road: &RoadSpec, clf: &ClfParams, v: f64, s: f64) -> f64 {
    let gap = road.v_max - v;
    clf.b * road.v_max * s / (2.0 * gap * gap * v)
}

/// NCC gain `k_i` for a given force `Λ_i` and heading.
pub fn ncc_gain(road: &RoadSpec, suite: &PotentialSuite, mu2: f64, lambda_i: f64, theta: f64) -> f64 {
    let (vm, vs) = (road.v_max, road.v_star);
    let c = cos(theta);
    mu2 + lambda_i / vs + vm * c * suite.eval_r(-lambda_i).0 / (vs * (vm * c - vs))
}

/// Per-vehicle interaction sums of one snapshot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Interactions {
    /// `Σ_j V'(d_ij) (x_i - x_j) / d_ij`.
    pub push_x: Vec<f64>,
    /// `Σ_j p_ij V'(d_ij) (y_i - y_j) / d_ij`.
    pub push_y: Vec<f64>,
    /// `Σ_j κ(d_ij) (g1(v_j cos θ_j) - g1(v_i cos θ_i))`.
    pub visc_x: Vec<f64>,
    /// `Σ_j κ(d_ij) (g2(v_j sin θ_j) - g2(v_i sin θ_i))`.
    pub visc_y: Vec<f64>,
}

/// Scratch buffers reused across right-hand-side evaluations.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    pairs: Vec<(usize, usize)>,
    g1: Vec<f64>,
    g2: Vec<f64>,
    pub inter: Interactions,
    /// Constraint hit by the most recent failed evaluation.
    pub last_violation: Option<Violation>,
}

/// Fills `ws.inter` for the flat state `w`. Each pair is visited once in
/// lexicographic order, so every vehicle accumulates its terms in increasing
/// partner index.
pub(crate) fn interactions_into(model: &Model, w: &[f64], ws: &mut Workspace) -> Result<()> {
    let n = w.len() / 4;
    let (x, y, th, v) = (&w[..n], &w[n..2 * n], &w[2 * n..3 * n], &w[3 * n..]);
    let suite = &model.suite;
    let inter = &mut ws.inter;
    for buf in [&mut inter.push_x, &mut inter.push_y, &mut inter.visc_x, &mut inter.visc_y] {
        buf.clear();
        buf.resize(n, 0.0);
    }
    let viscous = !suite.is_inviscid();
    if viscous {
        ws.g1.clear();
        ws.g2.clear();
        for i in 0..n {
            ws.g1.push(suite.g1.value(v[i] * cos(th[i])));
            ws.g2.push(suite.g2.value(v[i] * sin(th[i])));
        }
    }
    candidate_pairs(x, suite.lambda, &mut ws.pairs);
    for &(i, j) in &ws.pairs {
        let p = model.pairs.p(i, j);
        let l = model.pairs.l(i, j);
        let (dx, dy) = (x[i] - x[j], y[i] - y[j]);
        let d = distance(dx, dy, p);
        let dv = match suite.eval_v(d, l) {
            Ok(r) => r.1,
            Err(e) => {
                ws.last_violation = Some(Violation::Collision { i, j, distance: d, min: l });
                return Err(e);
            }
        };
        if dv != 0.0 {
            inter.push_x[i] += dv * dx / d;
            inter.push_x[j] -= dv * dx / d;
            inter.push_y[i] += p * dv * dy / d;
            inter.push_y[j] -= p * dv * dy / d;
        }
        if viscous {
            let k = suite.kernel.eval(d, suite.lambda);
            if k != 0.0 {
                let ex = k * (ws.g1[j] - ws.g1[i]);
                let ey = k * (ws.g2[j] - ws.g2[i]);
                inter.visc_x[i] += ex;
                inter.visc_x[j] -= ex;
                inter.visc_y[i] += ey;
                inter.visc_y[j] -= ey;
            }
        }
    }
    Ok(())
}

/// Interaction sums of a snapshot.
pub fn interactions(model: &Model, state: &FleetState) -> Result<Interactions> {
    check_vehicles(model, state)?;
    let mut ws = Workspace::default();
    interactions_into(model, state.as_slice(), &mut ws)?;
    Ok(ws.inter)
}

/// Controls of vehicle `i` given the interaction sums.
#[inline]
fn control_one(model: &Model, w: &[f64], inter: &Interactions, i: usize) -> Result<(f64, f64)> {
    let n = w.len() / 4;
    let (y, th, v) = (w[n + i], w[2 * n + i], w[3 * n + i]);
    let road = &model.road;
    let clf = &model.clf;
    let suite = &model.suite;
    let (s, c) = (sin(th), cos(th));
    let du = suite.eval_u(y, road.half_width)?.1;
    match model.controller {
        Controller::Ncc { mu1, mu2 } => {
            let lam = inter.push_x[i] - inter.visc_x[i];
            let k = ncc_gain(road, suite, mu2, lam, th);
            let f = -(k * (v * c - road.v_star) + lam) / c;
            let z = -mu1 * v * s + inter.visc_y[i];
            let gap = c - cos(road.phi);
            let den = road.v_star + clf.a_penalty / (v * gap * gap) + v * c * (clf.b - 1.0);
            let u = (z - du - inter.push_y[i] - clf.b * s * f) / den;
            Ok((f, u))
        }
        Controller::Prcc => {
            let r = -suite.f1.value(v * c - road.v_star) + inter.visc_x[i];
            let g = -suite.f2.value(v * s) + inter.visc_y[i];
            let f = (r - inter.push_x[i]) / q_unchecked(road, v, c);
            let u = v / beta_unchecked(road, clf, v, c) * (g - du - a_unchecked(road, clf, v, s) * f - inter.push_y[i]);
            Ok((f, u))
        }
    }
}

/// Controls of every vehicle for the flat state `w`, written to `out`.
pub(crate) fn controls_into(model: &Model, w: &[f64], ws: &mut Workspace, out: &mut ControlVector) -> Result<()> {
    let n = w.len() / 4;
    interactions_into(model, w, ws)?;
    out.u.resize(n, 0.0);
    out.f.resize(n, 0.0);
    for i in 0..n {
        let (f, u) = control_one(model, w, &ws.inter, i)?;
        out.f[i] = f;
        out.u[i] = u;
    }
    Ok(())
}

/// Controls of every vehicle.
pub fn controls(model: &Model, state: &FleetState) -> Result<ControlVector> {
    check_vehicles(model, state)?;
    let mut ws = Workspace::default();
    let mut out = ControlVector::zeros(state.n());
    controls_into(model, state.as_slice(), &mut ws, &mut out)?;
    Ok(out)
}

fn vehicle_index(state: &FleetState, i: usize) -> Result<()> {
    if i >= state.n() {
        return Err(Error::Index { index: i, len: state.n() });
    }
    Ok(())
}

fn require(model: &Model, want_ncc: bool) -> Result<(f64, f64)> {
    match (model.controller, want_ncc) {
        (Controller::Ncc { mu1, mu2 }, true) => Ok((mu1, mu2)),
        (Controller::Prcc, false) => Ok((0.0, 0.0)),
        (c, _) => Err(Error::invalid(format!("operation does not apply to the {} controller", c.name()))),
    }
}

/// NCC force `Λ_i`.
pub fn ncc_lambda(model: &Model, state: &FleetState, i: usize) -> Result<f64> {
    vehicle_index(state, i)?;
    let inter = interactions(model, state)?;
    Ok(inter.push_x[i] - inter.visc_x[i])
}

/// NCC gain `k_i`.
pub fn ncc_gain_k(model: &Model, state: &FleetState, i: usize) -> Result<f64> {
    let (_, mu2) = require(model, true)?;
    let lam = ncc_lambda(model, state, i)?;
    Ok(ncc_gain(&model.road, &model.suite, mu2, lam, state.theta()[i]))
}

/// NCC controls `(F_i, u_i)`.
pub fn ncc_control(model: &Model, state: &FleetState, i: usize) -> Result<(f64, f64)> {
    require(model, true)?;
    vehicle_index(state, i)?;
    let inter = interactions(model, state)?;
    control_one(model, state.as_slice(), &inter, i)
}

/// PRCC controls `(F_i, u_i)`.
pub fn prcc_control(model: &Model, state: &FleetState, i: usize) -> Result<(f64, f64)> {
    require(model, false)?;
    vehicle_index(state, i)?;
    let inter = interactions(model, state)?;
    control_one(model, state.as_slice(), &inter, i)
}

/// Joint derivative `ẇ` of the closed loop together with the controls.
pub fn closed_loop_derivative(model: &Model, state: &FleetState) -> Result<(Vec<f64>, ControlVector)> {
    check_vehicles(model, state)?;
    let n = state.n();
    let mut ws = Workspace::default();
    let mut ctl = ControlVector::zeros(n);
    let mut dw = vec![0.0; 4 * n];
    rhs_into(model, state.as_slice(), &mut ws, &mut ctl, &mut dw)?;
    Ok((dw, ctl))
}

/// Writes the closed-loop derivative of `w` to `dw`.
pub(crate) fn rhs_into(
    model: &Model,
    w: &[f64],
    ws: &mut Workspace,
    ctl: &mut ControlVector,
    dw: &mut [f64],
) -> Result<()> {
    let n = w.len() / 4;
    let road = &model.road;
    for i in 0..n {
        let (th, v) = (w[2 * n + i], w[3 * n + i]);
        let y = w[n + i];
        let hit = if !(y.abs() < road.half_width) {
            Some(Violation::Lateral { vehicle: i, y })
        } else if !(th.abs() < road.phi) {
            Some(Violation::Heading { vehicle: i, theta: th })
        } else if !(v > 0.0) {
            Some(Violation::Stopped { vehicle: i, v })
        } else if !(v < road.v_max) {
            Some(Violation::Speeding { vehicle: i, v })
        } else {
            None
        };
        if let Some(hit) = hit {
            ws.last_violation = Some(hit);
            return Err(Error::domain(format!("{hit}")));
        }
    }
    controls_into(model, w, ws, ctl)?;
    for i in 0..n {
        let (th, v) = (w[2 * n + i], w[3 * n + i]);
        dw[i] = v * cos(th);
        dw[n + i] = v * sin(th);
        dw[2 * n + i] = ctl.u[i];
        dw[3 * n + i] = ctl.f[i];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_relative_eq;

    fn single(m: &mut Model) {
        m.vehicles.truncate(1);
        m.pairs = crate::fleet::PairMatrix::uniform(1, 1.0, 1.0);
    }

    fn two(m: &mut Model) {
        m.vehicles.truncate(2);
        m.pairs = crate::fleet::PairMatrix::uniform(2, presets::LATERAL_WEIGHT, presets::MIN_SEPARATION);
    }

    #[test]
    fn prcc_scalars_at_set_point() {
        let road = presets::road();
        assert_relative_eq!(prcc_q(&road, 30.0, 0.0).unwrap(), 1.0 / 150.0, max_relative = 1e-14);
        let beta = prcc_beta(&road, &ClfParams::default(), 30.0, 0.0).unwrap();
        let expect = 1.0 / (1.0 - cos(0.25)).powi(2) + 6.0;
        assert_relative_eq!(beta, expect, max_relative = 1e-14);
        assert!((beta - 1040.728).abs() < 1e-3);
        assert_eq!(prcc_a(&road, &ClfParams::default(), 20.0, 0.0).unwrap(), 0.0);
        assert!(prcc_q(&road, 35.0, 0.0).is_err());
    }

    #[test]
    fn ncc_gain_without_interactions() {
        let m = presets::ncc_viscous();
        let k = ncc_gain(&m.road, &m.suite, 1.0 / 35.0, 0.0, 0.0);
        assert_relative_eq!(k, 1.0 / 35.0 + 0.1 * 35.0 / 150.0, max_relative = 1e-14);
        assert!((k - 0.051904).abs() < 1e-6);
    }

    #[test]
    fn single_vehicle_controls() {
        let mut m = presets::ncc_viscous();
        single(&mut m);
        let s = FleetState::from_components(&[0.0], &[0.0], &[0.0], &[25.0]).unwrap();
        let (f, u) = ncc_control(&m, &s, 0).unwrap();
        let k = ncc_gain(&m.road, &m.suite, 1.0 / 35.0, 0.0, 0.0);
        assert_relative_eq!(f, k * 5.0, max_relative = 1e-14);
        assert_eq!(u, 0.0);

        let mut p = presets::prcc_viscous();
        single(&mut p);
        let (f, u) = prcc_control(&p, &s, 0).unwrap();
        let q = prcc_q(&p.road, 25.0, 0.0).unwrap();
        assert_relative_eq!(f, 5.0 / (35.0 * 35.0) / q, max_relative = 1e-14);
        assert_eq!(u, 0.0);
    }

    #[test]
    fn follower_pushes_leader() {
        let mut m = presets::ncc_inviscid();
        two(&mut m);
        let s = FleetState::from_components(&[10.0, 0.0], &[0.0; 2], &[0.0; 2], &[30.0; 2]).unwrap();
        let lam = ncc_lambda(&m, &s, 0).unwrap();
        let dv = m.suite.eval_v(10.0, presets::MIN_SEPARATION).unwrap().1;
        assert_relative_eq!(lam, dv, max_relative = 1e-15);
        assert!(lam < 0.0);
        assert_eq!(ncc_lambda(&m, &s, 1).unwrap(), -lam);
        assert!(ncc_control(&m, &s, 0).unwrap().0 > 0.0);
    }

    #[test]
    fn equilibrium_has_zero_controls() {
        for m in [presets::ncc_viscous(), presets::prcc_viscous()] {
            let x: Vec<f64> = (0..10).map(|k| 30.0 * k as f64).collect();
            let s = FleetState::from_components(&x, &[0.0; 10], &[0.0; 10], &[30.0; 10]).unwrap();
            let c = controls(&m, &s).unwrap();
            assert!(c.f.iter().chain(&c.u).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn controller_mismatch_is_rejected() {
        let m = presets::prcc_viscous();
        let x: Vec<f64> = (0..10).map(|k| 30.0 * k as f64).collect();
        let s = FleetState::from_components(&x, &[0.0; 10], &[0.0; 10], &[30.0; 10]).unwrap();
        assert!(ncc_control(&m, &s, 0).is_err());
        assert!(prcc_control(&m, &s, 10).is_err());
    }
}
