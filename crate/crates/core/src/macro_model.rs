//! Macroscopic traffic-fluid models on a uniform 1-D grid.
//!
//! Density follows `ρ_t + (ρ(v - c))_x = 0` in a frame moving with speed
//! `c`. The speed equation is the PRCC law
//! `q(v)(v_t + (v - c)v_x) = -P_x/ρ + (μ g(v)_x)_x/ρ - f(v - v*)` or the NCC
//! law `v_t + (v - c)v_x = G - (γ + h(G))(v - v*)` with
//! `G = -P_x/ρ + (μ g(v)_x)_x/ρ`.
//!
//! One step is explicit: the donor-cell density update comes first and the
//! speed update uses the new density. Advection of speed is upwind;
//! pressure and viscous terms use central differences.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::longitudinal::{line_q, ncc_h, LongitudinalFamily, LongitudinalModel};
use crate::math::log;
use crate::potential::{Kernel, PairPotential, Shape};

/// Safety factor of the stable step.
pub const CFL_SAFETY: f64 = 0.4;

/// The speed transform `Q(v) = ∫_{v*}^{v} q(s) ds` and its inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedTransform {
    pub v_max: f64,
    pub v_star: f64,
}

impl SpeedTransform {
    pub fn new(v_max: f64, v_star: f64) -> Result<Self> {
        if !(v_star > 0.0 && v_star < v_max && v_max.is_finite()) {
            return Err(Error::invalid(format!("need 0 < v* < v_max, got v* = {v_star}, v_max = {v_max}")));
        }
        Ok(Self { v_max, v_star })
    }

    #[inline]
    fn unchecked(&self, v: f64) -> f64 {
        let (vm, vs) = (self.v_max, self.v_star);
        (log(v * (vm - vs) / (vs * (vm - v))) - vs / v + (vm - vs) / (vm - v)) / (2.0 * vm)
    }

    /// `Q(v)` for `0 < v < v_max`.
    pub fn eval(&self, v: f64) -> Result<f64> {
        if !(v > 0.0 && v < self.v_max) {
            return Err(Error::domain(format!("speed transform needs 0 < v < v_max, got v = {v}")));
        }
        Ok(self.unchecked(v))
    }

    /// `Q'(v) = q(v)`.
    pub fn derivative(&self, v: f64) -> f64 {
        line_q(self.v_max, self.v_star, v)
    }

    /// `Q⁻¹(w)` by bisection on `(0, v_max)`.
    pub fn inverse(&self, w: f64) -> Result<f64> {
        if !w.is_finite() {
            return Err(Error::domain(format!("speed transform inverse needs a finite argument, got {w}")));
        }
        if w == 0.0 {
            return Ok(self.v_star);
        }
        let (mut lo, mut hi) = if w > 0.0 { (self.v_star, self.v_max) } else { (0.0, self.v_star) };
        for _ in 0..crate::math::BISECT_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.unchecked(mid) < w {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// The monotone speed response `g` of the viscous term.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SpeedResponse {
    Shape(Shape),
    /// `g = Q`, which turns the PRCC model into the `(ρ, w)` form.
    Transform,
}

/// Relaxation law of the macroscopic model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "snake_case", deny_unknown_fields))]
pub enum MacroFamily {
    Prcc { f: Shape },
    Ncc { gamma: f64, r: Shape },
}

/// Macroscopic parameters derived from a single-lane model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MacroParams {
    /// Total mass `m`.
    pub mass: f64,
    pub min_gap: f64,
    pub lambda: f64,
    pub phi: PairPotential,
    pub kernel: Kernel,
    /// `m / L`.
    pub rho_max: f64,
    /// `m / λ`.
    pub rho_bar: f64,
    pub v_max: f64,
    pub v_star: f64,
    /// Pressure offset.
    pub z: f64,
    pub g: SpeedResponse,
    pub family: MacroFamily,
}

/// Grid samples per interval when checking `Φ` and `K`.
const POTENTIAL_CHECK_POINTS: usize = 400;

/// Derives the macroscopic parameters of a single-lane model.
pub fn map_micro_to_macro(model: &LongitudinalModel, z: f64) -> Result<MacroParams> {
    model.validate()?;
    if !z.is_finite() {
        return Err(Error::invalid("pressure offset z must be finite"));
    }
    let PairPotential::Cubic { q1 } = model.phi;
    if !(q1 > 0.0) {
        return Err(Error::invalid(format!("pair potential needs q1 > 0, got {q1}")));
    }
    let (l, lam) = (model.min_gap, model.lambda);
    for k in 1..POTENTIAL_CHECK_POINTS {
        let d = l + (lam - l) * k as f64 / POTENTIAL_CHECK_POINTS as f64;
        let kd = model.kernel.eval(d, lam);
        if !(kd >= 0.0) {
            return Err(Error::invalid(format!("kernel K is negative at d = {d}")));
        }
    }
    let family = match &model.family {
        LongitudinalFamily::Prcc { f, .. } => MacroFamily::Prcc { f: f.clone() },
        LongitudinalFamily::Ncc { gamma, r, .. } => MacroFamily::Ncc { gamma: *gamma, r: r.clone() },
    };
    Ok(MacroParams {
        mass: model.mass,
        min_gap: l,
        lambda: lam,
        phi: model.phi.clone(),
        kernel: model.kernel.clone(),
        rho_max: model.mass / l,
        rho_bar: model.mass / lam,
        v_max: model.v_max,
        v_star: model.v_star,
        z,
        g: SpeedResponse::Shape(model.family.g().clone()),
        family,
    })
}

impl MacroParams {
    fn check_rho(&self, rho: f64) -> Result<f64> {
        if !(rho > 0.0 && rho < self.rho_max) {
            return Err(Error::domain(format!("need 0 < rho < rho_max = {}, got {rho}", self.rho_max)));
        }
        Ok(self.mass / rho)
    }

    /// `P(ρ) = z - mΦ'(m/ρ)`.
    pub fn pressure(&self, rho: f64) -> Result<f64> {
        let d = self.check_rho(rho)?;
        Ok(self.z - self.mass * self.phi.eval(d, self.min_gap, self.lambda)?.1)
    }

    /// `P'(ρ) = m²Φ''(m/ρ)/ρ²`.
    pub fn pressure_slope(&self, rho: f64) -> Result<f64> {
        let d = self.check_rho(rho)?;
        Ok(self.mass * self.mass * self.phi.second_derivative(d, self.min_gap, self.lambda)? / (rho * rho))
    }

    /// `μ(ρ) = (m²/ρ)K(m/ρ)`.
    pub fn viscosity(&self, rho: f64) -> Result<f64> {
        let d = self.check_rho(rho)?;
        Ok(self.mass * self.mass / rho * self.kernel.eval(d, self.lambda))
    }

    pub fn transform(&self) -> SpeedTransform {
        SpeedTransform { v_max: self.v_max, v_star: self.v_star }
    }

    /// `g(v)` and `g'(v)`.
    pub fn response(&self, v: f64) -> Result<(f64, f64)> {
        match &self.g {
            SpeedResponse::Shape(s) => Ok(s.eval(v)),
            SpeedResponse::Transform => {
                let t = self.transform();
                Ok((t.eval(v)?, t.derivative(v)))
            }
        }
    }

    /// Speed inertia: `q(v)` for PRCC and 1 for NCC.
    pub fn inertia(&self, v: f64) -> f64 {
        match self.family {
            MacroFamily::Prcc { .. } => line_q(self.v_max, self.v_star, v),
            MacroFamily::Ncc { .. } => 1.0,
        }
    }
}

/// Uniform cells on `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub cells: usize,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, cells: usize) -> Result<Self> {
        if !(x_max > x_min && x_min.is_finite() && x_max.is_finite()) || cells < 3 {
            return Err(Error::invalid(format!("grid needs x_min < x_max and at least 3 cells, got [{x_min}, {x_max}] with {cells}")));
        }
        Ok(Self { x_min, x_max, cells })
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.cells as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        self.x_min + (k as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|k| self.center(k)).collect()
    }
}

/// Boundary treatment of the grid ends.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum Boundary {
    Periodic,
    /// Ghost cells held at fixed `(ρ, v)`.
    Inflow { left: (f64, f64), right: (f64, f64) },
}

/// Density and speed per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroField {
    pub grid: Grid,
    pub rho: Vec<f64>,
    pub v: Vec<f64>,
    pub boundary: Boundary,
    /// Speed `c` of the frame the grid moves with.
    pub frame_speed: f64,
}

/// Density and transformed speed `w = Q(v)` per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedField {
    pub grid: Grid,
    pub rho: Vec<f64>,
    pub w: Vec<f64>,
    pub boundary: Boundary,
    pub frame_speed: f64,
}

fn check_cells(params: &MacroParams, rho: &[f64], v: &[f64]) -> Result<()> {
    for (k, (&r, &s)) in rho.iter().zip(v).enumerate() {
        if !(r > 0.0 && r < params.rho_max) {
            return Err(Error::Constraint { cell: k, what: format!("density {r} outside (0, {})", params.rho_max) });
        }
        if !(s > 0.0 && s < params.v_max) {
            return Err(Error::Constraint { cell: k, what: format!("speed {s} outside (0, {})", params.v_max) });
        }
    }
    Ok(())
}

impl MacroField {
    pub fn new(grid: Grid, rho: Vec<f64>, v: Vec<f64>, boundary: Boundary, frame_speed: f64) -> Result<Self> {
        if rho.len() != grid.cells || v.len() != grid.cells {
            return Err(Error::invalid(format!("expected {} cells", grid.cells)));
        }
        if !frame_speed.is_finite() {
            return Err(Error::invalid("frame speed must be finite"));
        }
        Ok(Self { grid, rho, v, boundary, frame_speed })
    }

    /// Samples `ρ0` and `v0` at the cell centres.
    pub fn from_profile(
        grid: Grid,
        rho0: impl Fn(f64) -> f64,
        v0: impl Fn(f64) -> f64,
        boundary: Boundary,
        frame_speed: f64,
    ) -> Result<Self> {
        let xs = grid.centers();
        Self::new(grid, xs.iter().map(|&x| rho0(x)).collect(), xs.iter().map(|&x| v0(x)).collect(), boundary, frame_speed)
    }

    /// Checks `0 < ρ < ρ_max` and `0 < v < v_max` in every cell and ghost.
    pub fn check(&self, params: &MacroParams) -> Result<()> {
        check_cells(params, &self.rho, &self.v)?;
        if let Boundary::Inflow { left, right } = self.boundary {
            check_cells(params, &[left.0, right.0], &[left.1, right.1])
                .map_err(|_| Error::invalid("inflow ghost state outside the admissible range"))?;
        }
        Ok(())
    }

    /// `Σ ρ_k Δx`.
    pub fn mass(&self) -> f64 {
        self.rho.iter().sum::<f64>() * self.grid.dx()
    }

    pub fn to_transformed(&self, params: &MacroParams) -> Result<TransformedField> {
        let t = params.transform();
        let w = self.v.iter().map(|&v| t.eval(v)).collect::<Result<Vec<_>>>()?;
        Ok(TransformedField { grid: self.grid, rho: self.rho.clone(), w, boundary: self.boundary, frame_speed: self.frame_speed })
    }
}

impl TransformedField {
    pub fn to_field(&self, params: &MacroParams) -> Result<MacroField> {
        let t = params.transform();
        let v = self.w.iter().map(|&w| t.inverse(w)).collect::<Result<Vec<_>>>()?;
        Ok(MacroField { grid: self.grid, rho: self.rho.clone(), v, boundary: self.boundary, frame_speed: self.frame_speed })
    }

    pub fn mass(&self) -> f64 {
        self.rho.iter().sum::<f64>() * self.grid.dx()
    }
}

/// Cell values with one ghost on each side.
fn padded(x: &[f64], boundary: &Boundary, ghost: impl Fn(&(f64, f64)) -> f64) -> Vec<f64> {
    let n = x.len();
    let mut p = Vec::with_capacity(n + 2);
    match boundary {
        Boundary::Periodic => {
            p.push(x[n - 1]);
            p.extend_from_slice(x);
            p.push(x[0]);
        }
        Boundary::Inflow { left, right } => {
            p.push(ghost(left));
            p.extend_from_slice(x);
            p.push(ghost(right));
        }
    }
    p
}

/// Largest stable step:
/// `0.4 min(Δx / (a + c_s), Δx² q_min / (2 max μ g' / ρ))` with advection
/// bound `a = max(|c|, |v_max - c|)` and sound speed `c_s² = P'(ρ)/(ρ q(v))`.
pub fn stable_dt(field: &MacroField, params: &MacroParams) -> Result<f64> {
    let dx = field.grid.dx();
    let c = field.frame_speed;
    let adv = c.abs().max((params.v_max - c).abs());
    let mut sound: f64 = 0.0;
    let mut q_min = f64::INFINITY;
    let mut diff: f64 = 0.0;
    for (&r, &v) in field.rho.iter().zip(&field.v) {
        let q = params.inertia(v);
        q_min = q_min.min(q);
        sound = sound.max(libm::sqrt(params.pressure_slope(r)?.max(0.0) / (r * q)));
        diff = diff.max(params.viscosity(r)? * params.response(v)?.1.abs() / r);
    }
    let mut bound = dx / (adv + sound);
    if diff > 0.0 {
        bound = bound.min(dx * dx * q_min / (2.0 * diff));
    }
    Ok(CFL_SAFETY * bound)
}

fn check_dt(dt: f64, bound: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    if dt > bound {
        return Err(Error::Cfl { dt, bound });
    }
    Ok(())
}

/// Donor-cell density update.
fn continuity(rho: &[f64], v: &[f64], boundary: &Boundary, c: f64, dx: f64, dt: f64) -> Vec<f64> {
    let n = rho.len();
    let rp = padded(rho, boundary, |g| g.0);
    let vp = padded(v, boundary, |g| g.1);
    // Face k sits between padded cells k and k + 1.
    let flux: Vec<f64> = (0..=n)
        .map(|k| {
            let a = 0.5 * (vp[k] + vp[k + 1]) - c;
            a * if a >= 0.0 { rp[k] } else { rp[k + 1] }
        })
        .collect();
    (0..n).map(|k| rho[k] - dt / dx * (flux[k + 1] - flux[k])).collect()
}

/// Spatial operators shared by both speed laws.
struct Forces {
    /// `-(v - c)` times the upwind difference of the advected quantity,
    /// which is `Q(v)` for PRCC and `v` for NCC.
    advection: Vec<f64>,
    /// `-P_x/ρ + (μ g(v)_x)_x/ρ`.
    g: Vec<f64>,
}

fn forces(
    params: &MacroParams,
    rho: &[f64],
    v: &[f64],
    advected: &[f64],
    boundary: &Boundary,
    c: f64,
    dx: f64,
) -> Result<Forces> {
    let n = rho.len();
    let transform = params.transform();
    let to_q = |s: f64| -> f64 {
        match params.family {
            MacroFamily::Prcc { .. } => transform.eval(s).unwrap_or(f64::NAN),
            MacroFamily::Ncc { .. } => s,
        }
    };
    let rp = padded(rho, boundary, |g| g.0);
    let vp = padded(v, boundary, |g| g.1);
    let ap = padded(advected, boundary, |g| to_q(g.1));
    let pressure = rp.iter().map(|&r| params.pressure(r)).collect::<Result<Vec<_>>>()?;
    let inviscid = params.kernel.is_zero();
    let mu = if inviscid { vec![0.0; n + 2] } else { rp.iter().map(|&r| params.viscosity(r)).collect::<Result<Vec<_>>>()? };
    let gv = if inviscid { vec![0.0; n + 2] } else { vp.iter().map(|&s| params.response(s).map(|r| r.0)).collect::<Result<Vec<_>>>()? };
    let visc_flux: Vec<f64> = (0..=n).map(|k| 0.5 * (mu[k] + mu[k + 1]) * (gv[k + 1] - gv[k]) / dx).collect();
    let mut advection = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    for k in 0..n {
        let a = v[k] - c;
        let grad = if a >= 0.0 { ap[k + 1] - ap[k] } else { ap[k + 2] - ap[k + 1] };
        advection.push(-a * grad / dx);
        let dp = (pressure[k + 2] - pressure[k]) / (2.0 * dx);
        g.push((-dp + (visc_flux[k + 1] - visc_flux[k]) / dx) / rho[k]);
    }
    Ok(Forces { advection, g })
}

fn finish(params: &MacroParams, field: &MacroField, rho: Vec<f64>, v: Vec<f64>) -> Result<MacroField> {
    check_cells(params, &rho, &v)?;
    Ok(MacroField { grid: field.grid, rho, v, boundary: field.boundary, frame_speed: field.frame_speed })
}

/// One explicit step of the PRCC model.
pub fn prcc_pde_step(field: &MacroField, params: &MacroParams, dt: f64) -> Result<MacroField> {
    let MacroFamily::Prcc { f } = &params.family else {
        return Err(Error::invalid("prcc_pde_step needs PRCC parameters"));
    };
    field.check(params)?;
    check_dt(dt, stable_dt(field, params)?)?;
    let dx = field.grid.dx();
    let c = field.frame_speed;
    let rho = continuity(&field.rho, &field.v, &field.boundary, c, dx, dt);
    check_cells(params, &rho, &field.v)?;
    let t = params.transform();
    let w = field.v.iter().map(|&s| t.eval(s)).collect::<Result<Vec<_>>>()?;
    let fr = forces(params, &rho, &field.v, &w, &field.boundary, c, dx)?;
    let v = (0..rho.len())
        .map(|k| {
            let vk = field.v[k];
            vk + dt * (fr.advection[k] + fr.g[k] - f.value(vk - params.v_star)) / t.derivative(vk)
        })
        .collect();
    finish(params, field, rho, v)
}

/// One explicit step of the NCC model.
pub fn ncc_pde_step(field: &MacroField, params: &MacroParams, dt: f64) -> Result<MacroField> {
    let MacroFamily::Ncc { gamma, r } = &params.family else {
        return Err(Error::invalid("ncc_pde_step needs NCC parameters"));
    };
    field.check(params)?;
    check_dt(dt, stable_dt(field, params)?)?;
    let dx = field.grid.dx();
    let c = field.frame_speed;
    let rho = continuity(&field.rho, &field.v, &field.boundary, c, dx, dt);
    check_cells(params, &rho, &field.v)?;
    let fr = forces(params, &rho, &field.v, &field.v, &field.boundary, c, dx)?;
    let (vm, vs) = (params.v_max, params.v_star);
    let v = (0..rho.len())
        .map(|k| {
            let vk = field.v[k];
            let g = fr.g[k];
            vk + dt * (fr.advection[k] + g - (gamma + ncc_h(vm, vs, r, g)) * (vk - vs))
        })
        .collect();
    finish(params, field, rho, v)
}

/// One step of the model for the parameters' family.
pub fn pde_step(field: &MacroField, params: &MacroParams, dt: f64) -> Result<MacroField> {
    match params.family {
        MacroFamily::Prcc { .. } => prcc_pde_step(field, params, dt),
        MacroFamily::Ncc { .. } => ncc_pde_step(field, params, dt),
    }
}

/// One explicit step of the PRCC model in the variables `(ρ, w)`:
/// `ρ(w_t + (v - c)w_x) = (μ g(v)_x)_x - P_x - ρ f(v - v*)` with
/// `v = Q⁻¹(w)`. With `g = Q` the viscous flux is `μ w_x`.
pub fn transformed_pde_step(field: &TransformedField, params: &MacroParams, dt: f64) -> Result<TransformedField> {
    let MacroFamily::Prcc { f } = &params.family else {
        return Err(Error::invalid("transformed_pde_step needs PRCC parameters"));
    };
    let primal = field.to_field(params)?;
    primal.check(params)?;
    check_dt(dt, stable_dt(&primal, params)?)?;
    let dx = field.grid.dx();
    let c = field.frame_speed;
    let rho = continuity(&field.rho, &primal.v, &field.boundary, c, dx, dt);
    check_cells(params, &rho, &primal.v)?;
    let fr = forces(params, &rho, &primal.v, &field.w, &field.boundary, c, dx)?;
    let w: Vec<f64> = (0..rho.len())
        .map(|k| field.w[k] + dt * (fr.advection[k] + fr.g[k] - f.value(primal.v[k] - params.v_star)))
        .collect();
    let t = params.transform();
    let v = w.iter().map(|&x| t.inverse(x)).collect::<Result<Vec<_>>>()?;
    check_cells(params, &rho, &v)?;
    Ok(TransformedField { grid: field.grid, rho, w, boundary: field.boundary, frame_speed: c })
}

/// Horizon, step and snapshot spacing of a macroscopic run.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct MacroConfig {
    pub t_end: f64,
    /// Fixed step; the stable step is used when absent.
    #[cfg_attr(feature = "serde", serde(default))]
    pub dt: Option<f64>,
    /// Number of equally spaced snapshots after the initial one.
    pub snapshots: usize,
}

/// A recorded macroscopic run.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroRun {
    pub snapshots: Vec<(f64, MacroField)>,
    pub steps: usize,
    /// Largest `|M(t) - M(0)| / M(0)` over all steps.
    pub max_mass_drift: f64,
}

/// Advances `field` to `cfg.t_end`, landing exactly on snapshot times.
pub fn simulate_macro(field: &MacroField, params: &MacroParams, cfg: &MacroConfig) -> Result<MacroRun> {
    if !(cfg.t_end > 0.0 && cfg.t_end.is_finite()) || cfg.snapshots == 0 {
        return Err(Error::invalid("macro run needs t_end > 0 and at least one snapshot"));
    }
    field.check(params)?;
    let mass0 = field.mass();
    let mut cur = field.clone();
    let mut t = 0.0;
    let mut steps = 0;
    let mut drift: f64 = 0.0;
    let mut snapshots = vec![(0.0, field.clone())];
    for s in 1..=cfg.snapshots {
        let target = cfg.t_end * s as f64 / cfg.snapshots as f64;
        while t < target {
            let remaining = target - t;
            let h = match cfg.dt {
                Some(dt) => dt,
                None => stable_dt(&cur, params)?,
            };
            let (h, last) = if h >= remaining * (1.0 - 1e-12) { (remaining, true) } else { (h, false) };
            cur = pde_step(&cur, params, h)?;
            t = if last { target } else { t + h };
            steps += 1;
            drift = drift.max((cur.mass() - mass0).abs() / mass0);
        }
        snapshots.push((target, cur.clone()));
    }
    Ok(MacroRun { snapshots, steps, max_mass_drift: drift })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::Spline;
    use approx::assert_relative_eq;

    fn line(family: LongitudinalFamily, q2: f64) -> LongitudinalModel {
        LongitudinalModel {
            n: 100,
            mass: 100.0,
            min_gap: 5.59,
            lambda: 10.0,
            phi: PairPotential::Cubic { q1: 1e-4 },
            kernel: Kernel::Quadratic { q2 },
            v_max: 35.0,
            v_star: 30.0,
            family,
        }
    }

    fn prcc(q2: f64) -> MacroParams {
        let fam = LongitudinalFamily::Prcc { f: Shape::Linear { slope: 1.0 / 1225.0 }, g: Shape::IDENTITY };
        map_micro_to_macro(&line(fam, q2), 0.0).unwrap()
    }

    fn ncc(q2: f64) -> MacroParams {
        let fam = LongitudinalFamily::Ncc { gamma: 1.0 / 35.0, r: Shape::SmoothRamp { eps: 0.2 }, g: Shape::IDENTITY };
        map_micro_to_macro(&line(fam, q2), 0.0).unwrap()
    }

    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        simpson(f, a, m, fa, flm, fm, 0.5 * tol, depth - 1) + simpson(f, m, b, fm, frm, fb, 0.5 * tol, depth - 1)
    }

    fn quad<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
        let m = 0.5 * (a + b);
        simpson(&f, a, b, f(a), f(m), f(b), 1e-13, 40)
    }

    #[test]
    fn table_mapping() {
        let m = LongitudinalModel { mass: 1.0, ..line(LongitudinalFamily::Prcc { f: Shape::IDENTITY, g: Shape::IDENTITY }, 0.0) };
        let p = map_micro_to_macro(&m, 0.0).unwrap();
        assert_relative_eq!(p.rho_max, 1.0 / 5.59, max_relative = 1e-15);
        assert_relative_eq!(p.rho_max, 0.178890876565295, max_relative = 1e-12);
        assert_relative_eq!(p.rho_bar, 0.1, max_relative = 1e-15);
    }

    #[test]
    fn pressure_and_viscosity_vanish_below_interaction_density() {
        let p = prcc(1e-6);
        for k in 1..=1000 {
            let rho = p.rho_bar * k as f64 / 1000.0;
            assert_eq!(p.pressure(rho).unwrap(), 0.0);
            assert_eq!(p.viscosity(rho).unwrap(), 0.0);
        }
        let shifted = MacroParams { z: 2.5, ..p.clone() };
        assert_eq!(shifted.pressure(0.5 * p.rho_bar).unwrap(), 2.5);
        assert!(p.pressure(p.rho_max * (1.0 - 1e-6)).unwrap() > 1e6);
        assert!(p.viscosity(0.5 * (p.rho_bar + p.rho_max)).unwrap() > 0.0);
    }

    #[test]
    fn pressure_slope_matches_differences() {
        let p = prcc(0.0);
        for rho in [10.5, 13.0, 17.0] {
            let h = 1e-5;
            let fd = (p.pressure(rho + h).unwrap() - p.pressure(rho - h).unwrap()) / (2.0 * h);
            assert_relative_eq!(p.pressure_slope(rho).unwrap(), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn non_monotone_kernel_gives_non_monotone_viscosity() {
        let knots = Spline::new(vec![5.59, 6.5, 7.5, 8.5, 10.0], vec![1e-3, 2e-3, 1e-3, 5e-4, 0.0]).unwrap();
        let m = LongitudinalModel { kernel: Kernel::Tabulated { knots }, ..line(LongitudinalFamily::Prcc { f: Shape::IDENTITY, g: Shape::IDENTITY }, 0.0) };
        let p = map_micro_to_macro(&m, 0.0).unwrap();
        let rhos: Vec<f64> = (1..400).map(|k| p.rho_bar + (p.rho_max - p.rho_bar) * k as f64 / 400.0).collect();
        let mu: Vec<f64> = rhos.iter().map(|&r| p.viscosity(r).unwrap()).collect();
        let interior_max = (1..mu.len() - 1).any(|k| mu[k] > mu[k - 1] && mu[k] >= mu[k + 1] && mu[k] > 0.0);
        assert!(interior_max);
    }

    #[test]
    fn negative_kernel_is_rejected() {
        let knots = Spline::new(vec![5.59, 7.0, 10.0], vec![0.0, -1e-3, 0.0]).unwrap();
        let m = LongitudinalModel { kernel: Kernel::Tabulated { knots }, ..line(LongitudinalFamily::Prcc { f: Shape::IDENTITY, g: Shape::IDENTITY }, 0.0) };
        assert!(map_micro_to_macro(&m, 0.0).is_err());
    }

    #[test]
    fn transform_matches_quadrature() {
        let t = SpeedTransform::new(35.0, 30.0).unwrap();
        assert_eq!(t.eval(30.0).unwrap(), 0.0);
        for v in [0.5, 3.0, 12.0, 29.0, 31.0, 34.0, 34.9] {
            let oracle = quad(|s| line_q(35.0, 30.0, s), 30.0, v);
            assert_relative_eq!(t.eval(v).unwrap(), oracle, max_relative = 1e-9, epsilon = 1e-12);
        }
        assert!(t.eval(0.0).is_err());
        assert!(t.eval(35.0).is_err());
    }

    #[test]
    fn transform_round_trip() {
        use rand::{Rng, SeedableRng};
        let t = SpeedTransform::new(35.0, 30.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut prev: Option<(f64, f64)> = None;
        for _ in 0..1000 {
            let v = rng.gen_range(0.35..34.65);
            let w = t.eval(v).unwrap();
            assert!((t.inverse(w).unwrap() - v).abs() < 1e-9);
            if let Some((pv, pw)) = prev {
                assert_eq!(v < pv, w < pw);
            }
            prev = Some((v, w));
        }
    }

    fn bump(p: &MacroParams, boundary: Boundary, cells: usize) -> MacroField {
        let grid = Grid::new(-6.0, 6.0, cells).unwrap();
        let rho_b = 0.8 * p.rho_bar;
        MacroField::from_profile(
            grid,
            |x| rho_b + 5.0 * libm::exp(-x * x / 2.25),
            |x| p.v_star - 1.0 * libm::exp(-x * x / 4.0),
            boundary,
            p.v_star,
        )
        .unwrap()
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        for p in [prcc(1e-6), ncc(1e-6)] {
            let grid = Grid::new(0.0, 10.0, 50).unwrap();
            let f = MacroField::from_profile(grid, |x| p.rho_bar * (0.5 + 0.4 * libm::sin(x)), |_| p.v_star, Boundary::Periodic, p.v_star).unwrap();
            let dt = stable_dt(&f, &p).unwrap();
            let next = pde_step(&f, &p, dt).unwrap();
            assert_eq!(next, f);
            if matches!(p.family, MacroFamily::Prcc { .. }) {
                let tf = f.to_transformed(&p).unwrap();
                assert!(tf.w.iter().all(|&w| w == 0.0));
                assert_eq!(transformed_pde_step(&tf, &p, dt).unwrap(), tf);
            }
        }
    }

    #[test]
    fn uniform_field_relaxes_like_the_scalar_law() {
        let p = prcc(1e-6);
        let grid = Grid::new(0.0, 10.0, 20).unwrap();
        let v0 = 25.0;
        let f = MacroField::from_profile(grid, |_| 0.9 * p.rho_bar, |_| v0, Boundary::Periodic, 0.0).unwrap();
        // Exact solution of q(v)v' = -(v - v*)/1225 is not closed form; a
        // fine RK4 integration serves as the oracle.
        let oracle = |dt: f64| {
            let rhs = |v: f64| -(v - 30.0) / 1225.0 / line_q(35.0, 30.0, v);
            let mut v = v0;
            let h = dt / 100.0;
            for _ in 0..100 {
                let k1 = rhs(v);
                let k2 = rhs(v + 0.5 * h * k1);
                let k3 = rhs(v + 0.5 * h * k2);
                let k4 = rhs(v + h * k3);
                v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            v
        };
        let mut errs = vec![];
        for dt in [4e-3, 2e-3] {
            let next = prcc_pde_step(&f, &p, dt).unwrap();
            assert!(next.rho.iter().all(|&r| r == f.rho[0]));
            assert!(next.v.iter().all(|&v| v == next.v[0]));
            errs.push((next.v[0] - oracle(dt)).abs());
        }
        assert!(errs[0] > 0.0);
        assert_relative_eq!(errs[0] / errs[1], 4.0, max_relative = 0.05);
    }

    #[test]
    fn ncc_zero_force_rate() {
        let p = ncc(0.0);
        let MacroFamily::Ncc { gamma, r } = &p.family else { unreachable!() };
        let h0 = ncc_h(35.0, 30.0, r, 0.0);
        assert_relative_eq!(h0, 35.0 * 0.1 / 150.0, max_relative = 1e-14);
        assert_relative_eq!(h0, 0.0233333333333333, max_relative = 1e-12);
        let grid = Grid::new(0.0, 10.0, 20).unwrap();
        let f = MacroField::from_profile(grid, |_| 0.9 * p.rho_bar, |_| 28.0, Boundary::Periodic, 0.0).unwrap();
        let dt = 1e-3;
        let next = ncc_pde_step(&f, &p, dt).unwrap();
        assert_relative_eq!(next.v[3], 28.0 + dt * (gamma + h0) * 2.0, max_relative = 1e-14);
    }

    #[test]
    fn periodic_mass_is_conserved() {
        for p in [prcc(1e-6), ncc(1e-6)] {
            let mut f = bump(&p, Boundary::Periodic, 100);
            let m0 = f.mass();
            for _ in 0..200 {
                let dt = stable_dt(&f, &p).unwrap();
                let next = pde_step(&f, &p, dt).unwrap();
                assert!((next.mass() - f.mass()).abs() / f.mass() < 1e-12);
                f = next;
            }
            assert!((f.mass() - m0).abs() / m0 < 1e-12);
        }
    }

    #[test]
    fn cfl_violation_is_an_error() {
        let p = prcc(1e-6);
        let f = bump(&p, Boundary::Periodic, 100);
        let bound = stable_dt(&f, &p).unwrap();
        assert!(matches!(prcc_pde_step(&f, &p, 2.0 * bound), Err(Error::Cfl { .. })));
        assert!(matches!(ncc_pde_step(&f, &p, bound), Err(Error::Invalid(_))));
    }

    #[test]
    fn transformed_path_agrees_to_second_order() {
        let p = MacroParams { g: SpeedResponse::Transform, ..prcc(1e-6) };
        let f = bump(&p, Boundary::Periodic, 100);
        let base = stable_dt(&f, &p).unwrap();
        let mut errs = vec![];
        for dt in [0.5 * base, 0.25 * base, 0.125 * base] {
            let mut a = f.clone();
            let mut b = f.to_transformed(&p).unwrap();
            for _ in 0..10 {
                a = prcc_pde_step(&a, &p, dt).unwrap();
                b = transformed_pde_step(&b, &p, dt).unwrap();
            }
            let back = b.to_field(&p).unwrap();
            let e = a.v.iter().zip(&back.v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            errs.push(e);
        }
        let order = libm::log2(errs[1] / errs[2]);
        assert!((order - 2.0).abs() < 0.2, "errors {errs:?}");
    }

    #[test]
    fn inflow_boundary_keeps_background() {
        let p = ncc(1e-6);
        let g = (0.8 * p.rho_bar, p.v_star);
        let mut f = bump(&p, Boundary::Inflow { left: g, right: g }, 120);
        let cfg = MacroConfig { t_end: 0.2, dt: None, snapshots: 2 };
        let run = simulate_macro(&f, &p, &cfg).unwrap();
        assert_eq!(run.snapshots.len(), 3);
        assert_eq!(run.snapshots[2].0, 0.2);
        f = run.snapshots[2].1.clone();
        assert!(f.rho.iter().all(|&r| r > 0.0 && r < p.rho_max));
    }
}
