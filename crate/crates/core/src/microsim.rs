//! Guarded time integration of the closed-loop fleet and the seeded
//! initial-condition generator.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::control::{rhs_into, Workspace};
use crate::energy::{check_vehicles, dissipation, eval_clf, eval_h, eval_h_r};
use crate::error::{Error, Result};
use crate::fleet::{in_state_space, ControlVector, FleetState, Violation};
use crate::integrate::{step_factor, DormandPrince, Method, OdeSystem, Rk4};
use crate::model::Model;

/// Retries with a halved step before a guard failure becomes fatal.
pub const MAX_HALVINGS: u32 = 8;
/// Allowed per-step energy increase relative to `max(1, initial energy)`.
pub const ENERGY_TOL: f64 = 1e-8;

/// Step size, horizon, method and sampling stride.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct IntegratorConfig {
    pub method: Method,
    /// Fixed step, or the initial step of the adaptive method.
    pub dt: f64,
    pub t_end: f64,
    /// Record every `record_every`-th accepted step; the final state is
    /// always recorded.
    pub record_every: usize,
}

impl IntegratorConfig {
    pub fn rk4(dt: f64, t_end: f64, record_every: usize) -> Self {
        Self { method: Method::Rk4, dt, t_end, record_every }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("integrator.dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::invalid(format!("integrator.t_end must be positive, got {}", self.t_end)));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("integrator.record_every must be at least 1"));
        }
        if let Method::Rk45 { rtol, atol } = self.method {
            if !(rtol > 0.0 && atol > 0.0) {
                return Err(Error::invalid("adaptive tolerances must be positive"));
            }
        }
        Ok(())
    }
}

/// What tripped a guard.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum GuardKind {
    Collision,
    SpeedBound,
    HeadingBound,
    LateralBound,
    EnergyIncrease,
}

impl GuardKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GuardKind::Collision => "collision",
            GuardKind::SpeedBound => "speed-bound",
            GuardKind::HeadingBound => "heading-bound",
            GuardKind::LateralBound => "lateral-bound",
            GuardKind::EnergyIncrease => "energy-increase",
        }
    }
}

/// A guard trigger. Vehicle indices are zero based.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct GuardEvent {
    /// Start time of the step that failed.
    pub time: f64,
    pub kind: GuardKind,
    pub vehicle: Option<usize>,
    pub pair: Option<(usize, usize)>,
    /// Signed slack of the violated constraint, or the energy increase.
    pub margin: f64,
    /// Step size of the failed attempt.
    pub step: f64,
    /// Whether a smaller step later succeeded.
    pub recovered: bool,
}

impl fmt::Display for GuardEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} guard at t = {} (step {})", self.kind.as_str(), self.time, self.step)?;
        if let Some(v) = self.vehicle {
            write!(f, ", vehicle {}", v + 1)?;
        }
        if let Some((i, j)) = self.pair {
            write!(f, ", vehicles {} and {}", i + 1, j + 1)?;
        }
        write!(f, ", margin {}", self.margin)
    }
}

/// One recorded instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: FleetState,
    pub controls: ControlVector,
    /// Newtonian energy `H`.
    pub h: f64,
    /// Pseudo-relativistic energy `H_R`.
    pub h_r: f64,
    /// `Δ` for PRCC, `Γ` for NCC.
    pub dissipation: f64,
}

impl Sample {
    /// The energy the model's controller decreases.
    pub fn clf(&self, model: &Model) -> f64 {
        match model.controller {
            crate::Controller::Ncc { .. } => self.h,
            crate::Controller::Prcc => self.h_r,
        }
    }
}

/// A recorded run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    /// Recovered guard triggers.
    pub events: Vec<GuardEvent>,
    /// Accepted steps, including sub-steps after halving.
    pub steps: usize,
}

/// Statistics of a run whose samples went to an observer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunStats {
    pub events: Vec<GuardEvent>,
    pub steps: usize,
    /// Largest per-step increase of the controller's energy.
    pub max_energy_increase: f64,
}

/// Why a simulation stopped early.
#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    /// The model, configuration or initial state is invalid.
    Invalid(Error),
    /// A guard still failed after the maximum number of halvings.
    Guard { event: GuardEvent, stats: Box<RunStats> },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::Invalid(e) => write!(f, "{e}"),
            SimError::Guard { event, .. } => write!(f, "guard failure: {event}"),
        }
    }
}

impl From<Error> for SimError {
    fn from(e: Error) -> Self {
        SimError::Invalid(e)
    }
}

struct ClosedLoop<'a> {
    model: &'a Model,
    ws: Workspace,
    ctl: ControlVector,
}

impl OdeSystem for ClosedLoop<'_> {
    fn rhs(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        rhs_into(self.model, y, &mut self.ws, &mut self.ctl, dy)
    }
}

/// Closed-loop derivative `ẇ` for the model's controller.
pub fn closed_loop_rhs(model: &Model, state: &FleetState) -> Result<Vec<f64>> {
    crate::control::closed_loop_derivative(model, state).map(|(dw, _)| dw)
}

fn sample(model: &Model, t: f64, w: &[f64]) -> Result<Sample> {
    let state = FleetState::from_flat(w.to_vec())?;
    let (_, controls) = crate::control::closed_loop_derivative(model, &state)?;
    Ok(Sample {
        t,
        h: eval_h(model, &state)?,
        h_r: eval_h_r(model, &state)?,
        dissipation: dissipation(model, &state)?,
        controls,
        state,
    })
}

fn violation_event(v: &Violation, t: f64, step: f64, road_vmax: f64, half_width: f64, phi: f64) -> GuardEvent {
    let mut ev = GuardEvent { time: t, kind: GuardKind::Collision, vehicle: None, pair: None, margin: 0.0, step, recovered: false };
    match *v {
        Violation::Collision { i, j, distance, min } => {
            ev.pair = Some((i, j));
            ev.margin = distance - min;
        }
        Violation::Stopped { vehicle, v } => {
            ev.kind = GuardKind::SpeedBound;
            ev.vehicle = Some(vehicle);
            ev.margin = v;
        }
        Violation::Speeding { vehicle, v } => {
            ev.kind = GuardKind::SpeedBound;
            ev.vehicle = Some(vehicle);
            ev.margin = road_vmax - v;
        }
        Violation::Heading { vehicle, theta } => {
            ev.kind = GuardKind::HeadingBound;
            ev.vehicle = Some(vehicle);
            ev.margin = phi - theta.abs();
        }
        Violation::Lateral { vehicle, y } => {
            ev.kind = GuardKind::LateralBound;
            ev.vehicle = Some(vehicle);
            ev.margin = half_width - y.abs();
        }
        Violation::NotFinite { vehicle } => {
            ev.kind = GuardKind::SpeedBound;
            ev.vehicle = Some(vehicle);
            ev.margin = f64::NAN;
        }
    }
    ev
}

enum Stepper {
    Fixed(Rk4),
    Adaptive(DormandPrince),
}

struct Runner<'a> {
    model: &'a Model,
    sys: ClosedLoop<'a>,
    stepper: Stepper,
    scratch: Vec<f64>,
    energy_tol: f64,
    stats: RunStats,
}

impl Runner<'_> {
    /// Accepts the attempt in `self.scratch` or classifies why it failed.
    fn check(&mut self, t: f64, h: f64, stepped: Result<()>, energy: f64) -> core::result::Result<f64, GuardEvent> {
        let road = self.model.road;
        let blank = GuardEvent {
            time: t,
            kind: GuardKind::EnergyIncrease,
            vehicle: None,
            pair: None,
            margin: f64::NAN,
            step: h,
            recovered: false,
        };
        if stepped.is_err() {
            // A stage state left the admissible set.
            return Err(match self.sys.ws.last_violation.take() {
                Some(v) => violation_event(&v, t, h, road.v_max, road.half_width, road.phi),
                None => blank,
            });
        }
        let state = FleetState::from_flat(self.scratch.clone()).expect("flat state");
        let adm = in_state_space(&state, &road, &self.model.pairs);
        if let Some(v) = adm.violations.first() {
            return Err(violation_event(v, t, h, road.v_max, road.half_width, road.phi));
        }
        match eval_clf(self.model, &state) {
            Ok(e) if e <= energy + self.energy_tol => {
                self.stats.max_energy_increase = self.stats.max_energy_increase.max(e - energy);
                Ok(e)
            }
            Ok(e) => {
                let mut ev = blank;
                ev.margin = e - energy;
                Err(ev)
            }
            Err(_) => {
                let mut ev = blank;
                ev.kind = GuardKind::Collision;
                ev.margin = adm.separation_slack;
                Err(ev)
            }
        }
    }

    /// Advances `w` over `[t, t + h]` with recursive halving on guard
    /// failures. Returns the new energy.
    fn advance(&mut self, w: &mut Vec<f64>, t: f64, h: f64, energy: f64, depth: u32) -> core::result::Result<f64, GuardEvent> {
        let stepped = match &mut self.stepper {
            Stepper::Fixed(rk) => rk.step(&mut self.sys, t, w, h, &mut self.scratch),
            Stepper::Adaptive(_) => unreachable!("adaptive steps use advance_adaptive"),
        };
        match self.check(t, h, stepped, energy) {
            Ok(e) => {
                core::mem::swap(w, &mut self.scratch);
                self.stats.steps += 1;
                Ok(e)
            }
            Err(mut ev) if depth < MAX_HALVINGS => {
                let half = 0.5 * h;
                let e1 = self.advance(w, t, half, energy, depth + 1)?;
                let e2 = self.advance(w, t + half, half, e1, depth + 1)?;
                ev.recovered = true;
                self.stats.events.push(ev);
                Ok(e2)
            }
            Err(ev) => Err(ev),
        }
    }
}

/// Integrates the closed loop and hands every recorded sample to `observe`.
pub fn simulate_observed<F: FnMut(&Sample)>(
    model: &Model,
    initial: &FleetState,
    cfg: &IntegratorConfig,
    mut observe: F,
) -> core::result::Result<RunStats, SimError> {
    cfg.validate()?;
    if let Some(f) = model.validate().into_iter().next() {
        return Err(Error::invalid(f.message).into());
    }
    check_vehicles(model, initial)?;
    let adm = in_state_space(initial, &model.road, &model.pairs);
    if let Some(v) = adm.violations.first() {
        return Err(Error::invalid(format!("initial state is not admissible: {v}")).into());
    }
    let dim = 4 * initial.n();
    let mut w = initial.as_slice().to_vec();
    let e0 = eval_clf(model, initial)?;
    let stepper = match cfg.method {
        Method::Rk4 => Stepper::Fixed(Rk4::new(dim)),
        Method::Rk45 { .. } => Stepper::Adaptive(DormandPrince::new(dim)),
    };
    let mut run = Runner {
        model,
        sys: ClosedLoop { model, ws: Workspace::default(), ctl: ControlVector::zeros(initial.n()) },
        stepper,
        scratch: vec![0.0; dim],
        energy_tol: ENERGY_TOL * e0.max(1.0),
        stats: RunStats::default(),
    };
    observe(&sample(model, 0.0, &w)?);

    let fail = |ev: GuardEvent, stats: RunStats| SimError::Guard { event: ev, stats: Box::new(stats) };
    let mut energy = e0;
    match cfg.method {
        Method::Rk4 => {
            let steps = libm::ceil(cfg.t_end / cfg.dt - 1e-9).max(1.0) as usize;
            for k in 0..steps {
                let t = k as f64 * cfg.dt;
                let h = if k + 1 == steps { cfg.t_end - t } else { cfg.dt };
                match run.advance(&mut w, t, h, energy, 0) {
                    Ok(e) => energy = e,
                    Err(ev) => return Err(fail(ev, run.stats)),
                }
                if (k + 1) % cfg.record_every == 0 || k + 1 == steps {
                    observe(&sample(model, t + h, &w)?);
                }
            }
        }
        Method::Rk45 { rtol, atol } => {
            let (mut t, mut h) = (0.0, cfg.dt);
            let mut accepted = 0usize;
            let mut halvings = 0u32;
            let mut pending: Option<GuardEvent> = None;
            let h_min = cfg.dt * libm::pow(0.5, 40.0);
            while t < cfg.t_end {
                let last = t + h >= cfg.t_end;
                if last {
                    h = cfg.t_end - t;
                }
                let Stepper::Adaptive(dp) = &mut run.stepper else { unreachable!() };
                let err = dp.step(&mut run.sys, t, &w, h, rtol, atol, &mut run.scratch);
                let err = match err {
                    Ok(e) if e <= 1.0 => e,
                    Ok(e) => {
                        h *= step_factor(e).min(0.9);
                        if h < h_min {
                            return Err(Error::invalid(format!("adaptive step collapsed at t = {t}")).into());
                        }
                        continue;
                    }
                    Err(_) => {
                        h *= 0.5;
                        if h < h_min {
                            return Err(Error::invalid(format!("adaptive step collapsed at t = {t}")).into());
                        }
                        continue;
                    }
                };
                match run.check(t, h, Ok(()), energy) {
                    Ok(e) => {
                        energy = e;
                        core::mem::swap(&mut w, &mut run.scratch);
                        t = if last { cfg.t_end } else { t + h };
                        run.stats.steps += 1;
                        accepted += 1;
                        halvings = 0;
                        if let Some(mut ev) = pending.take() {
                            ev.recovered = true;
                            run.stats.events.push(ev);
                        }
                        if accepted.is_multiple_of(cfg.record_every) || t >= cfg.t_end {
                            observe(&sample(model, t, &w)?);
                        }
                        h *= step_factor(err);
                    }
                    Err(ev) => {
                        if halvings >= MAX_HALVINGS {
                            return Err(fail(ev, run.stats));
                        }
                        halvings += 1;
                        pending.get_or_insert(ev);
                        h *= 0.5;
                    }
                }
            }
        }
    }
    Ok(run.stats)
}

/// Integrates the closed loop and keeps every recorded sample.
pub fn simulate(model: &Model, initial: &FleetState, cfg: &IntegratorConfig) -> core::result::Result<Trajectory, SimError> {
    let mut samples = Vec::new();
    let stats = simulate_observed(model, initial, cfg, |s| samples.push(s.clone()))?;
    Ok(Trajectory { samples, events: stats.events, steps: stats.steps })
}

/// Parameters of the seeded initial-condition generator.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct GeneratorConfig {
    /// Mean longitudinal gap between consecutive vehicles, as a fraction of
    /// the interaction radius.
    pub mean_gap: f64,
    /// Relative half-width of the uniform gap jitter.
    pub gap_jitter: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { mean_gap: 0.8, gap_jitter: 0.35 }
    }
}

/// Draws an admissible initial state: vehicles staggered backwards from
/// `x = 0` with jittered gaps, lateral positions in the flat band of `U`,
/// headings uniform in `[-φ/2, φ/2]` and speeds uniform in
/// `[v*/2, min(0.9 v_max / cos φ, 1.1 v*)]` capped below `v_max`.
pub fn generate_initial(model: &Model, seed: u64, cfg: &GeneratorConfig) -> Result<FleetState> {
    let n = model.n();
    let road = &model.road;
    let lambda = model.suite.lambda;
    let min_gap = lambda * cfg.mean_gap * (1.0 - cfg.gap_jitter);
    if !(cfg.gap_jitter >= 0.0 && cfg.gap_jitter < 1.0 && min_gap > model.pairs.max_l()) {
        return Err(Error::invalid(format!(
            "generator gaps down to {min_gap} do not clear the minimum separation {}",
            model.pairs.max_l()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let band = model.suite.boundary.flat_half_width(road.half_width);
    let v_lo = 0.5 * road.v_star;
    let v_hi = (0.9 * road.v_max / libm::cos(road.phi)).min(1.1 * road.v_star).min(road.v_max * (1.0 - 1e-6));
    let (mut x, mut y, mut th, mut v) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        if i > 0 {
            let gap = lambda * cfg.mean_gap * (1.0 + cfg.gap_jitter * rng.gen_range(-1.0..=1.0));
            x[i] = x[i - 1] - gap;
        }
        y[i] = if band > 0.0 { rng.gen_range(-band..=band) } else { 0.0 };
        th[i] = rng.gen_range(-0.5 * road.phi..=0.5 * road.phi);
        v[i] = rng.gen_range(v_lo..=v_hi);
    }
    let state = FleetState::from_components(&x, &y, &th, &v)?;
    let adm = in_state_space(&state, road, &model.pairs);
    match adm.violations.first() {
        Some(v) => Err(Error::invalid(v.to_string())),
        None => Ok(state),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::PairMatrix;
    use crate::presets;

    fn solo(mut m: Model) -> Model {
        m.vehicles.truncate(1);
        m.pairs = PairMatrix::uniform(1, 1.0, 1.0);
        m
    }

    #[test]
    fn equilibrium_stays_put() {
        let m = presets::prcc_viscous();
        let x: Vec<f64> = (0..10).map(|k| -30.0 * k as f64).collect();
        let s = FleetState::from_components(&x, &[0.0; 10], &[0.0; 10], &[30.0; 10]).unwrap();
        let dw = closed_loop_rhs(&m, &s).unwrap();
        assert!(dw[..10].iter().all(|d| *d == 30.0));
        assert!(dw[10..].iter().all(|d| *d == 0.0));
        let traj = simulate(&m, &s, &IntegratorConfig::rk4(0.01, 1.0, 10)).unwrap();
        assert!(traj.samples.iter().all(|s| s.h.abs() < 1e-12 && s.h_r.abs() < 1e-12));
        assert_eq!(traj.samples.len(), 11);
        assert!((traj.samples[10].t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generator_is_deterministic_and_admissible() {
        let m = presets::ncc_viscous();
        let a = generate_initial(&m, 42, &GeneratorConfig::default()).unwrap();
        let b = generate_initial(&m, 42, &GeneratorConfig::default()).unwrap();
        let c = generate_initial(&m, 43, &GeneratorConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.theta().iter().all(|t| t.abs() <= 0.125));
        assert!(a.v().iter().all(|v| (15.0..=32.6).contains(v)));
    }

    #[test]
    fn single_vehicle_relaxes_to_set_point() {
        let m = solo(presets::ncc_inviscid());
        let s = FleetState::from_components(&[0.0], &[0.0], &[0.0], &[20.0]).unwrap();
        let traj = simulate(&m, &s, &IntegratorConfig::rk4(0.01, 400.0, 1000)).unwrap();
        let last = traj.samples.last().unwrap();
        assert!((last.state.v()[0] - 30.0).abs() < 1e-3);
        assert!(traj.samples.windows(2).all(|p| (p[1].state.v()[0] - 30.0).abs() <= (p[0].state.v()[0] - 30.0).abs()));
    }

    #[test]
    fn adaptive_matches_fixed_step() {
        let m = presets::prcc_viscous();
        let s = generate_initial(&m, 3, &GeneratorConfig::default()).unwrap();
        let fixed = simulate(&m, &s, &IntegratorConfig::rk4(1e-3, 2.0, 2000)).unwrap();
        let cfg = IntegratorConfig { method: Method::Rk45 { rtol: 1e-10, atol: 1e-12 }, dt: 1e-3, t_end: 2.0, record_every: 1_000_000 };
        let adaptive = simulate(&m, &s, &cfg).unwrap();
        let (a, b) = (fixed.samples.last().unwrap(), adaptive.samples.last().unwrap());
        assert!((a.t - b.t).abs() < 1e-12);
        for (p, q) in a.state.as_slice().iter().zip(b.state.as_slice()) {
            assert!((p - q).abs() < 1e-6, "{p} vs {q}");
        }
    }

    #[test]
    fn coarse_step_exhausts_the_guard() {
        let m = presets::ncc_viscous();
        let mut s = generate_initial(&m, 1, &GeneratorConfig { mean_gap: 0.3, gap_jitter: 0.1 }).unwrap();
        s.as_mut_slice()[30] = 15.0;
        match simulate(&m, &s, &IntegratorConfig::rk4(1e3, 2e3, 1)) {
            Err(SimError::Guard { event, .. }) => assert!(!event.recovered),
            other => panic!("expected a guard failure, got {other:?}"),
        }
    }
}
