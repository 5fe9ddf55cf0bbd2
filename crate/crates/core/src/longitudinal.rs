//! Single-lane model of `n` identical vehicles of total mass `m` with
//! potentials scaled as `V(s) = Φ(ns)` and `κ(s) = n²K(ns)`.
//!
//! Vehicle 1 leads. The state is `(x_1, ..., x_n, v_1, ..., v_n)` and the
//! spacings are `s_i = x_{i-1} - x_i` for `i = 2, ..., n`.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{Method, OdeSystem, Rk4};
use crate::microsim::{GuardEvent, GuardKind, IntegratorConfig, RunStats, SimError, MAX_HALVINGS};
use crate::potential::{Kernel, PairPotential, Shape};

/// Speed law of the single-lane model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "snake_case", deny_unknown_fields))]
pub enum LongitudinalFamily {
    /// `q(v)v̇ = -f(v - v*) + G`.
    Prcc { f: Shape, g: Shape },
    /// `v̇ = -(γ + h(G))(v - v*) + G`.
    Ncc { gamma: f64, r: Shape, g: Shape },
}

impl LongitudinalFamily {
    pub fn g(&self) -> &Shape {
        match self {
            LongitudinalFamily::Prcc { g, .. } | LongitudinalFamily::Ncc { g, .. } => g,
        }
    }
}

/// Parameters of the single-lane model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct LongitudinalModel {
    pub n: usize,
    /// Total mass `m`.
    pub mass: f64,
    /// Minimum unscaled spacing `L`.
    pub min_gap: f64,
    /// Interaction radius `λ` of `Φ` and `K`.
    pub lambda: f64,
    pub phi: PairPotential,
    pub kernel: Kernel,
    pub v_max: f64,
    pub v_star: f64,
    pub family: LongitudinalFamily,
}

/// PRCC inertia on a line.
pub fn line_q(v_max: f64, v_star: f64, v: f64) -> f64 {
    (v_max * v - 2.0 * v_star * v + v_star * v_max) / (2.0 * (v_max - v) * (v_max - v) * v * v)
}

/// NCC gain correction `h(s) = v_max r(s) / (v*(v_max - v*)) - s / v*`.
pub fn ncc_h(v_max: f64, v_star: f64, r: &Shape, s: f64) -> f64 {
    v_max * r.value(s) / (v_star * (v_max - v_star)) - s / v_star
}

impl LongitudinalModel {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("longitudinal model needs at least one vehicle"));
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::invalid(format!("total mass must be positive, got {}", self.mass)));
        }
        if !(self.min_gap > 0.0 && self.lambda > self.min_gap && self.lambda < 2.0 * self.min_gap) {
            return Err(Error::invalid(format!(
                "need 0 < L < lambda < 2L, got L = {}, lambda = {}",
                self.min_gap, self.lambda
            )));
        }
        if !(self.v_max > 0.0 && self.v_star > 0.0 && self.v_star < self.v_max) {
            return Err(Error::invalid("need 0 < v* < v_max"));
        }
        if let LongitudinalFamily::Ncc { gamma, .. } = self.family {
            if !(gamma > 0.0) {
                return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
            }
        }
        Ok(())
    }

    /// Density `m / (n s)` for a spacing `s`.
    pub fn density(&self, s: f64) -> f64 {
        self.mass / (self.n as f64 * s)
    }

    /// Spacing `m / (n ρ)` for a density `ρ`.
    pub fn spacing(&self, rho: f64) -> f64 {
        self.mass / (self.n as f64 * rho)
    }

    fn check_state(&self, w: &[f64]) -> core::result::Result<(), GuardEvent> {
        let n = self.n;
        let blank = GuardEvent {
            time: 0.0,
            kind: GuardKind::Collision,
            vehicle: None,
            pair: None,
            margin: 0.0,
            step: 0.0,
            recovered: false,
        };
        for i in 1..n {
            let gap = n as f64 * (w[i - 1] - w[i]) - self.min_gap;
            if !(gap > 0.0) {
                return Err(GuardEvent { pair: Some((i - 1, i)), margin: gap, ..blank });
            }
        }
        for i in 0..n {
            let v = w[n + i];
            if !(v > 0.0 && v < self.v_max) {
                let margin = if v.is_finite() { v.min(self.v_max - v) } else { f64::NAN };
                return Err(GuardEvent { kind: GuardKind::SpeedBound, vehicle: Some(i), margin, ..blank });
            }
        }
        Ok(())
    }

    /// Interaction force `G_i` for every vehicle.
    pub fn forces_into(&self, w: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n;
        let nf = n as f64;
        let (x, v) = w.split_at(n);
        let g = self.family.g();
        out.fill(0.0);
        for i in 1..n {
            let d = nf * (x[i - 1] - x[i]);
            let (_, dphi) = self.phi.eval(d, self.min_gap, self.lambda)?;
            let k = self.kernel.eval(d, self.lambda);
            let visc = nf * nf * k * (g.value(v[i]) - g.value(v[i - 1]));
            // Pressure pushes the leader of the pair forward and the follower back.
            out[i - 1] += -nf * dphi + visc;
            out[i] += nf * dphi - visc;
        }
        Ok(())
    }

    /// Time derivative of the state `(x, v)`.
    pub fn rhs_into(&self, w: &[f64], dw: &mut [f64]) -> Result<()> {
        let n = self.n;
        if let Err(ev) = self.check_state(w) {
            return Err(Error::domain(format!("state outside the single-lane state space: {ev}")));
        }
        let (dx, dv) = dw.split_at_mut(n);
        dx.copy_from_slice(&w[n..]);
        self.forces_into(w, dv)?;
        let (vm, vs) = (self.v_max, self.v_star);
        for i in 0..n {
            let v = w[n + i];
            let gi = dv[i];
            dv[i] = match &self.family {
                LongitudinalFamily::Prcc { f, .. } => (gi - f.value(v - vs)) / line_q(vm, vs, v),
                LongitudinalFamily::Ncc { gamma, r, .. } => gi - (gamma + ncc_h(vm, vs, r, gi)) * (v - vs),
            };
        }
        Ok(())
    }

    pub fn rhs(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut dw = vec![0.0; w.len()];
        self.rhs_into(w, &mut dw)?;
        Ok(dw)
    }

    /// Builds a state from positions and speeds, checking the state space.
    pub fn state(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n || v.len() != self.n {
            return Err(Error::invalid(format!("expected {} positions and speeds", self.n)));
        }
        let mut w = x.to_vec();
        w.extend_from_slice(v);
        self.check_state(&w)
            .map_err(|ev| Error::domain(format!("initial state outside the single-lane state space: {ev}")))?;
        Ok(w)
    }
}

/// One recorded instant of a single-lane run.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    /// `s_2, ..., s_n`.
    pub spacings: Vec<f64>,
    /// `m / (n s_i)` located at `x_i`, for `i = 2, ..., n`.
    pub densities: Vec<f64>,
}

impl LineSample {
    fn new(model: &LongitudinalModel, t: f64, w: &[f64]) -> Self {
        let n = model.n;
        let x = w[..n].to_vec();
        let spacings: Vec<f64> = x.windows(2).map(|p| p[0] - p[1]).collect();
        let densities = spacings.iter().map(|&s| model.density(s)).collect();
        Self { t, x, v: w[n..].to_vec(), spacings, densities }
    }
}

/// A recorded single-lane run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LineTrajectory {
    pub samples: Vec<LineSample>,
    /// Recovered guard triggers.
    pub events: Vec<GuardEvent>,
    pub steps: usize,
}

struct Line<'a>(&'a LongitudinalModel);

impl OdeSystem for Line<'_> {
    fn rhs(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self.0.rhs_into(y, dy)
    }
}

struct LineRunner<'a> {
    model: &'a LongitudinalModel,
    rk: Rk4,
    scratch: Vec<f64>,
    stats: RunStats,
}

impl LineRunner<'_> {
    fn advance(&mut self, w: &mut Vec<f64>, t: f64, h: f64, depth: u32) -> core::result::Result<(), GuardEvent> {
        let stepped = self.rk.step(&mut Line(self.model), t, w, h, &mut self.scratch);
        let verdict = match stepped {
            Ok(()) => self.model.check_state(&self.scratch),
            Err(_) => Err(self.model.check_state(w).err().unwrap_or(GuardEvent {
                time: t,
                kind: GuardKind::Collision,
                vehicle: None,
                pair: None,
                margin: f64::NAN,
                step: h,
                recovered: false,
            })),
        };
        match verdict {
            Ok(()) => {
                core::mem::swap(w, &mut self.scratch);
                self.stats.steps += 1;
                Ok(())
            }
            Err(mut ev) => {
                ev.time = t;
                ev.step = h;
                if depth >= MAX_HALVINGS {
                    return Err(ev);
                }
                let half = 0.5 * h;
                self.advance(w, t, half, depth + 1)?;
                self.advance(w, t + half, half, depth + 1)?;
                ev.recovered = true;
                self.stats.events.push(ev);
                Ok(())
            }
        }
    }
}

/// Integrates the single-lane model with guarded fixed-step RK4.
pub fn longitudinal_simulate(
    model: &LongitudinalModel,
    init: &[f64],
    cfg: &IntegratorConfig,
) -> core::result::Result<LineTrajectory, SimError> {
    model.validate()?;
    cfg.validate()?;
    if !matches!(cfg.method, Method::Rk4) {
        return Err(Error::invalid("the single-lane model supports fixed-step RK4 only").into());
    }
    if init.len() != 2 * model.n {
        return Err(Error::invalid(format!("expected a state of length {}", 2 * model.n)).into());
    }
    model
        .check_state(init)
        .map_err(|ev| Error::domain(format!("initial state outside the single-lane state space: {ev}")))?;
    let mut runner = LineRunner { model, rk: Rk4::new(init.len()), scratch: vec![0.0; init.len()], stats: RunStats::default() };
    let mut w = init.to_vec();
    let mut samples = vec![LineSample::new(model, 0.0, &w)];
    let steps = libm::ceil(cfg.t_end / cfg.dt - 1e-9).max(1.0) as usize;
    let h = cfg.t_end / steps as f64;
    for k in 0..steps {
        let t = k as f64 * h;
        if let Err(event) = runner.advance(&mut w, t, h, 0) {
            return Err(SimError::Guard { event, stats: Box::new(runner.stats) });
        }
        if (k + 1) % cfg.record_every == 0 || k + 1 == steps {
            samples.push(LineSample::new(model, (k + 1) as f64 * h, &w));
        }
    }
    Ok(LineTrajectory { samples, events: runner.stats.events, steps: runner.stats.steps })
}
