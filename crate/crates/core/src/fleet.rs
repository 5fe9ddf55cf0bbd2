//! Vehicles, the road, the joint state and the admissible set.
//!
//! The joint state is stored flat as `(x_1..x_n, y_1..y_n, θ_1..θ_n,
//! v_1..v_n)` so that gradients and right-hand sides share one layout.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;
use core::fmt;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::energy::ClfParams;
use crate::error::{Error, Result};
use crate::math::{atan, cos, sqrt};

/// Road geometry and speed limits shared by all vehicles.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RoadSpec {
    /// Half width `a` of the road; lateral positions satisfy `|y| < a`.
    pub half_width: f64,
    /// Speed limit `v_max`.
    pub v_max: f64,
    /// Desired longitudinal speed `v*`.
    pub v_star: f64,
    /// Heading bound `φ`; headings satisfy `|θ| < φ`.
    pub phi: f64,
}

impl RoadSpec {
    pub fn new(half_width: f64, v_max: f64, v_star: f64, phi: f64) -> Result<Self> {
        let road = Self { half_width, v_max, v_star, phi };
        let failures = road.failures();
        match failures.into_iter().next() {
            Some(f) => Err(Error::invalid(f.message)),
            None => Ok(road),
        }
    }

    fn failures(&self) -> Vec<ConstraintFailure> {
        let mut out = Vec::new();
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            out.push(ConstraintFailure::new(
                "road.half_width",
                format!("road half width must be positive, got {}", self.half_width),
            ));
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            out.push(ConstraintFailure::new(
                "road.v_max",
                format!("speed limit must be positive, got {}", self.v_max),
            ));
        }
        if !(self.v_star > 0.0 && self.v_star < self.v_max) {
            out.push(ConstraintFailure::new(
                "road.v_star",
                format!(
                    "desired speed must lie in (0, v_max = {}), got {}",
                    self.v_max, self.v_star
                ),
            ));
        }
        if !(self.phi > 0.0 && self.phi < FRAC_PI_2) {
            out.push(ConstraintFailure::new(
                "road.phi",
                format!("heading bound must lie in (0, pi/2), got {}", self.phi),
            ));
        } else if cos(self.phi) <= self.v_star / self.v_max {
            out.push(ConstraintFailure::new(
                "road.phi",
                format!(
                    "cos(phi) = {} must exceed v_star / v_max = {}",
                    cos(self.phi),
                    self.v_star / self.v_max
                ),
            ));
        }
        out
    }
}

/// Per-vehicle constants.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct VehicleSpec {
    /// Wheelbase-like constant `σ` in `δ = atan(σ u / v)`.
    pub sigma: f64,
}

/// Symmetric per-pair constants: distance weights `p_ij` and minimum
/// separations `L_ij`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PairMatrix {
    n: usize,
    p: Vec<f64>,
    l: Vec<f64>,
}

impl PairMatrix {
    /// Every pair shares the same weight and minimum separation.
    pub fn uniform(n: usize, p: f64, l: f64) -> Self {
        Self { n, p: vec![p; n * n], l: vec![l; n * n] }
    }

    /// Builds the matrix from row-major `n × n` tables. Diagonal entries are
    /// ignored.
    pub fn from_tables(n: usize, p: Vec<f64>, l: Vec<f64>) -> Result<Self> {
        if p.len() != n * n || l.len() != n * n {
            return Err(Error::invalid(format!(
                "pair tables must have {} entries, got {} and {}",
                n * n,
                p.len(),
                l.len()
            )));
        }
        let m = Self { n, p, l };
        match m.failures().into_iter().next() {
            Some(f) => Err(Error::invalid(f.message)),
            None => Ok(m),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }

    #[inline]
    pub fn l(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    /// Largest off-diagonal minimum separation.
    pub fn max_l(&self) -> f64 {
        let mut m = 0.0_f64;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    m = m.max(self.l(i, j));
                }
            }
        }
        m
    }

    fn failures(&self) -> Vec<ConstraintFailure> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let (p, l) = (self.p(i, j), self.l(i, j));
                if p != self.p(j, i) || l != self.l(j, i) {
                    out.push(ConstraintFailure::new(
                        "fleet.pairs",
                        format!("pair constants of vehicles {} and {} are not symmetric", i + 1, j + 1),
                    ));
                }
                if !(p >= 1.0 && p.is_finite()) || !(l > 0.0 && l.is_finite()) {
                    out.push(ConstraintFailure::new(
                        "fleet.pairs",
                        format!(
                            "pair ({}, {}) needs p >= 1 and L > 0, got p = {p}, L = {l}",
                            i + 1,
                            j + 1
                        ),
                    ));
                }
            }
        }
        out
    }
}

/// One vehicle's entry of the joint state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

/// Joint state `w = (x, y, θ, v)` of `n` vehicles.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct FleetState {
    n: usize,
    w: Vec<f64>,
}

impl FleetState {
    pub fn from_components(x: &[f64], y: &[f64], theta: &[f64], v: &[f64]) -> Result<Self> {
        let n = x.len();
        if y.len() != n || theta.len() != n || v.len() != n {
            return Err(Error::invalid(format!(
                "state components have lengths {}, {}, {}, {}",
                n,
                y.len(),
                theta.len(),
                v.len()
            )));
        }
        let mut w = Vec::with_capacity(4 * n);
        w.extend_from_slice(x);
        w.extend_from_slice(y);
        w.extend_from_slice(theta);
        w.extend_from_slice(v);
        Ok(Self { n, w })
    }

    /// Wraps a flat vector laid out as `(x, y, θ, v)`.
    pub fn from_flat(w: Vec<f64>) -> Result<Self> {
        if !w.len().is_multiple_of(4) {
            return Err(Error::invalid(format!("flat state length {} is not a multiple of 4", w.len())));
        }
        Ok(Self { n: w.len() / 4, w })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.w
    }

    pub fn x(&self) -> &[f64] {
        &self.w[..self.n]
    }

    pub fn y(&self) -> &[f64] {
        &self.w[self.n..2 * self.n]
    }

    pub fn theta(&self) -> &[f64] {
        &self.w[2 * self.n..3 * self.n]
    }

    pub fn v(&self) -> &[f64] {
        &self.w[3 * self.n..]
    }

    pub fn vehicle(&self, i: usize) -> Result<VehicleState> {
        if i >= self.n {
            return Err(Error::Index { index: i, len: self.n });
        }
        Ok(VehicleState { x: self.w[i], y: self.w[self.n + i], theta: self.w[2 * self.n + i], v: self.w[3 * self.n + i] })
    }
}

/// Controls `(u_i, F_i)` for every vehicle.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ControlVector {
    /// Angular rates `u_i = θ̇_i`.
    pub u: Vec<f64>,
    /// Longitudinal accelerations `F_i = v̇_i`.
    pub f: Vec<f64>,
}

impl ControlVector {
    pub fn zeros(n: usize) -> Self {
        Self { u: vec![0.0; n], f: vec![0.0; n] }
    }
}

/// `d_ij = sqrt((x_i - x_j)^2 + p_ij (y_i - y_j)^2)` from raw coordinates.
#[inline]
pub fn distance(dx: f64, dy: f64, p: f64) -> f64 {
    sqrt(dx * dx + p * dy * dy)
}

/// Weighted distance between vehicles `i` and `j`.
pub fn weighted_distance(state: &FleetState, pairs: &PairMatrix, i: usize, j: usize) -> Result<f64> {
    let n = state.n();
    for k in [i, j] {
        if k >= n || k >= pairs.n() {
            return Err(Error::Index { index: k, len: n.min(pairs.n()) });
        }
    }
    if i == j {
        return Err(Error::invalid("distance of a vehicle to itself is undefined"));
    }
    let (x, y) = (state.x(), state.y());
    Ok(distance(x[i] - x[j], y[i] - y[j], pairs.p(i, j)))
}

/// A single reason why a state lies outside the admissible set. Vehicle
/// indices are zero based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Violation {
    Lateral { vehicle: usize, y: f64 },
    Heading { vehicle: usize, theta: f64 },
    Stopped { vehicle: usize, v: f64 },
    Speeding { vehicle: usize, v: f64 },
    Collision { i: usize, j: usize, distance: f64, min: f64 },
    NotFinite { vehicle: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::Lateral { vehicle, y } => write!(f, "vehicle {} left the road (y = {y})", vehicle + 1),
            Violation::Heading { vehicle, theta } => {
                write!(f, "vehicle {} exceeds the heading bound (theta = {theta})", vehicle + 1)
            }
            Violation::Stopped { vehicle, v } => write!(f, "vehicle {} is not moving forward (v = {v})", vehicle + 1),
            Violation::Speeding { vehicle, v } => write!(f, "vehicle {} reached the speed limit (v = {v})", vehicle + 1),
            Violation::Collision { i, j, distance, min } => {
                write!(f, "vehicles {} and {} collide (d = {distance}, L = {min})", i + 1, j + 1)
            }
            Violation::NotFinite { vehicle } => write!(f, "vehicle {} has a non-finite state", vehicle + 1),
        }
    }
}

/// Outcome of the admissibility check with the smallest slack per
/// constraint (negative slack means violated).
#[derive(Debug, Clone, PartialEq)]
pub struct Admissibility {
    pub violations: Vec<Violation>,
    /// `min_i (a - |y_i|)`.
    pub lateral_slack: f64,
    /// `min_i (φ - |θ_i|)`.
    pub heading_slack: f64,
    /// `min_i v_i`.
    pub min_speed: f64,
    /// `min_i (v_max - v_i)`.
    pub speed_slack: f64,
    /// `min_{i<j} (d_ij - L_ij)`.
    pub separation_slack: f64,
}

impl Admissibility {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks membership of the admissible set `Ω` and reports every violation.
pub fn in_state_space(state: &FleetState, road: &RoadSpec, pairs: &PairMatrix) -> Admissibility {
    let n = state.n();
    let (x, y, th, v) = (state.x(), state.y(), state.theta(), state.v());
    let mut rep = Admissibility {
        violations: Vec::new(),
        lateral_slack: f64::INFINITY,
        heading_slack: f64::INFINITY,
        min_speed: f64::INFINITY,
        speed_slack: f64::INFINITY,
        separation_slack: f64::INFINITY,
    };
    for i in 0..n {
        if !(x[i].is_finite() && y[i].is_finite() && th[i].is_finite() && v[i].is_finite()) {
            rep.violations.push(Violation::NotFinite { vehicle: i });
            continue;
        }
        rep.lateral_slack = rep.lateral_slack.min(road.half_width - y[i].abs());
        rep.heading_slack = rep.heading_slack.min(road.phi - th[i].abs());
        rep.min_speed = rep.min_speed.min(v[i]);
        rep.speed_slack = rep.speed_slack.min(road.v_max - v[i]);
        if y[i].abs() >= road.half_width {
            rep.violations.push(Violation::Lateral { vehicle: i, y: y[i] });
        }
        if th[i].abs() >= road.phi {
            rep.violations.push(Violation::Heading { vehicle: i, theta: th[i] });
        }
        if v[i] <= 0.0 {
            rep.violations.push(Violation::Stopped { vehicle: i, v: v[i] });
        }
        if v[i] >= road.v_max {
            rep.violations.push(Violation::Speeding { vehicle: i, v: v[i] });
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let d = distance(x[i] - x[j], y[i] - y[j], pairs.p(i, j));
            let min = pairs.l(i, j);
            rep.separation_slack = rep.separation_slack.min(d - min);
            if !(d > min) {
                rep.violations.push(Violation::Collision { i, j, distance: d, min });
            }
        }
    }
    rep
}

/// Steering angle `δ = atan(σ u / v)` realising the angular rate `u`.
pub fn steering_from_angular_rate(u: f64, v: f64, sigma: f64) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::domain(format!("steering needs a positive speed, got v = {v}")));
    }
    Ok(atan(sigma * u / v))
}

/// One failed structural requirement of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintFailure {
    /// Dotted path of the offending parameter, e.g. `potentials.lambda`.
    pub key: &'static str,
    pub message: String,
}

impl ConstraintFailure {
    pub fn new(key: &'static str, message: String) -> Self {
        Self { key, message }
    }
}

/// Checks every structural parameter requirement and lists all failures.
pub fn validate_scenario(
    road: &RoadSpec,
    vehicles: &[VehicleSpec],
    pairs: &PairMatrix,
    lambda: f64,
    clf: &ClfParams,
) -> Vec<ConstraintFailure> {
    let mut out = road.failures();
    out.extend(pairs.failures());
    if vehicles.len() != pairs.n() {
        out.push(ConstraintFailure::new(
            "fleet.n",
            format!("{} vehicles but pair constants for {}", vehicles.len(), pairs.n()),
        ));
    }
    for (i, veh) in vehicles.iter().enumerate() {
        if !(veh.sigma > 0.0 && veh.sigma.is_finite()) {
            out.push(ConstraintFailure::new(
                "fleet.sigma",
                format!("vehicle {} needs a positive sigma, got {}", i + 1, veh.sigma),
            ));
        }
    }
    let max_l = pairs.max_l();
    if !(lambda > max_l) {
        out.push(ConstraintFailure::new(
            "potentials.lambda",
            format!("interaction radius lambda = {lambda} must exceed the largest minimum separation max L_ij = {max_l}"),
        ));
    }
    if !(clf.a_penalty > 0.0 && clf.a_penalty.is_finite()) {
        out.push(ConstraintFailure::new(
            "controller.A",
            format!("heading penalty weight A must be positive, got {}", clf.a_penalty),
        ));
    }
    if road.v_max > 0.0 && !(clf.b > 1.0 - road.v_star / road.v_max) {
        out.push(ConstraintFailure::new(
            "controller.b",
            format!(
                "lateral weight b = {} must exceed 1 - v_star / v_max = {}",
                clf.b,
                1.0 - road.v_star / road.v_max
            ),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn road() -> RoadSpec {
        RoadSpec::new(7.2, 35.0, 30.0, 0.25).unwrap()
    }

    #[test]
    fn distance_uses_lateral_weight() {
        let s = FleetState::from_components(&[0.0, 3.0], &[0.0, 1.0], &[0.0; 2], &[30.0; 2]).unwrap();
        let pairs = PairMatrix::uniform(2, 16.0, 1.0);
        assert_relative_eq!(weighted_distance(&s, &pairs, 0, 1).unwrap(), 5.0, epsilon = 1e-15);
        assert_eq!(weighted_distance(&s, &pairs, 0, 2), Err(Error::Index { index: 2, len: 2 }));
    }

    #[test]
    fn admissible_state_has_no_violations() {
        let s = FleetState::from_components(&[0.0, 20.0], &[0.0, 1.0], &[0.1, -0.1], &[30.0, 25.0]).unwrap();
        let rep = in_state_space(&s, &road(), &PairMatrix::uniform(2, 5.11, 5.59));
        assert!(rep.is_admissible());
        assert_relative_eq!(rep.min_speed, 25.0);
    }

    #[test]
    fn every_violation_is_reported() {
        let s = FleetState::from_components(&[0.0, 1.0], &[7.5, 0.0], &[0.3, 0.0], &[0.0, 35.0]).unwrap();
        let rep = in_state_space(&s, &road(), &PairMatrix::uniform(2, 5.11, 5.59));
        assert_eq!(rep.violations.len(), 4);
        assert!(rep.separation_slack > 0.0);
        let close = FleetState::from_components(&[0.0, 1.0], &[0.0; 2], &[0.0; 2], &[30.0; 2]).unwrap();
        let rep = in_state_space(&close, &road(), &PairMatrix::uniform(2, 5.11, 5.59));
        assert_eq!(rep.violations, vec![Violation::Collision { i: 0, j: 1, distance: 1.0, min: 5.59 }]);
        assert_relative_eq!(rep.separation_slack, -4.59);
    }

    #[test]
    fn steering_matches_arctangent() {
        assert_relative_eq!(steering_from_angular_rate(0.1, 10.0, 2.0).unwrap(), atan(0.02));
        assert!(steering_from_angular_rate(0.1, 0.0, 2.0).is_err());
    }

    #[test]
    fn road_rejects_steep_heading_bound() {
        assert!(RoadSpec::new(7.2, 35.0, 34.0, 0.25).is_err());
        assert!(RoadSpec::new(7.2, 35.0, 36.0, 0.25).is_err());
    }

    #[test]
    fn scenario_rejects_short_interaction_radius() {
        let pairs = PairMatrix::uniform(3, 5.11, 30.0);
        let fails = validate_scenario(&road(), &[VehicleSpec { sigma: 1.0 }; 3], &pairs, 25.0, &ClfParams::default());
        assert_eq!(fails.len(), 1);
        assert_eq!(fails[0].key, "potentials.lambda");
    }

    #[test]
    fn scenario_rejects_small_lateral_weight() {
        let pairs = PairMatrix::uniform(2, 5.11, 5.59);
        let clf = ClfParams { a_penalty: 1.0, b: 0.1 };
        let fails = validate_scenario(&road(), &[VehicleSpec { sigma: 1.0 }; 2], &pairs, 25.0, &clf);
        assert!(fails.iter().any(|f| f.key == "controller.b"));
    }

    #[test]
    fn asymmetric_tables_are_rejected() {
        let mut l = vec![5.0; 4];
        l[1] = 6.0;
        assert!(PairMatrix::from_tables(2, vec![1.0; 4], l).is_err());
    }
}
