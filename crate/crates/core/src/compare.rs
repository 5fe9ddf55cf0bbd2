//! Comparison of the single-lane model with its macroscopic limit.
//!
//! Vehicles are sampled from a density profile by placing vehicle 1 at the
//! right edge and stepping back by `m / (n ρ0(midpoint))`, with the
//! midpoint taken from one fixed-point pass. The empirical density
//! `m / (n s_i)` sits at `x_i` and the empirical speed `v_i` at `x_i`. Both
//! are interpolated linearly onto the cells covered by the platoon. The
//! macroscopic grid moves with speed `v*`, so micro positions are shifted
//! by `v* t` before comparing.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::longitudinal::{longitudinal_simulate, LineSample, LongitudinalModel};
use crate::macro_model::{map_micro_to_macro, simulate_macro, Boundary, Grid, MacroConfig, MacroField, MacroParams};
use crate::math::{exp, sqrt};
use crate::microsim::{IntegratorConfig, SimError};

/// `ρ0(x) = background + amplitude exp(-((x - center)/width)²)` and
/// `v0(x) = speed + speed_amplitude exp(-((x - center)/width)²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct BumpProfile {
    pub background: f64,
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    pub speed: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub speed_amplitude: f64,
}

impl BumpProfile {
    fn bump(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.width;
        exp(-u * u)
    }

    pub fn rho(&self, x: f64) -> f64 {
        self.background + self.amplitude * self.bump(x)
    }

    pub fn v(&self, x: f64) -> f64 {
        self.speed + self.speed_amplitude * self.bump(x)
    }

    /// `∫ ρ0` over `[center - h, center + h]`.
    pub fn mass_within(&self, h: f64) -> f64 {
        2.0 * h * self.background + self.amplitude * self.width * sqrt(core::f64::consts::PI) * libm::erf(h / self.width)
    }

    /// Half width `h` of the centred window holding mass `m`.
    pub fn half_span(&self, m: f64) -> Result<f64> {
        if !(self.background > 0.0 && self.width > 0.0 && self.amplitude >= 0.0) {
            return Err(Error::invalid("profile needs background > 0, width > 0 and amplitude >= 0"));
        }
        let (mut lo, mut hi) = (0.0, m / (2.0 * self.background));
        for _ in 0..crate::math::BISECT_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            if self.mass_within(mid) < m {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Settings of a comparison sweep.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct CompareConfig {
    pub n_list: Vec<usize>,
    pub profile: BumpProfile,
    pub cells: usize,
    pub micro_dt: f64,
    /// Report times, increasing.
    pub times: Vec<f64>,
    /// Pressure offset.
    #[cfg_attr(feature = "serde", serde(default))]
    pub z: f64,
}

/// Errors between the empirical and macroscopic fields.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ErrorRow {
    pub n: usize,
    pub t: f64,
    pub l2_rho: f64,
    pub linf_rho: f64,
    pub l2_v: f64,
    pub linf_v: f64,
    /// Cells covered by the platoon.
    pub cells: usize,
}

/// Shared inputs of the micro and macro legs.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareSetup {
    pub base: LongitudinalModel,
    pub params: MacroParams,
    pub grid: Grid,
    pub initial: MacroField,
    pub config: CompareConfig,
}

/// Positions and speeds of `model.n` vehicles sampled from the profile,
/// with vehicle 1 at `x_right`.
pub fn sample_platoon(model: &LongitudinalModel, profile: &BumpProfile, x_right: f64) -> Result<Vec<f64>> {
    let n = model.n;
    let mut x = vec![x_right; n];
    for i in 1..n {
        let guess = model.spacing(profile.rho(x[i - 1]));
        x[i] = x[i - 1] - model.spacing(profile.rho(x[i - 1] - 0.5 * guess));
    }
    let v: Vec<f64> = x.iter().map(|&p| profile.v(p)).collect();
    model.state(&x, &v)
}

impl CompareSetup {
    pub fn new(base: &LongitudinalModel, config: &CompareConfig) -> Result<Self> {
        if config.n_list.is_empty() || config.n_list.iter().any(|&n| n < 2) {
            return Err(Error::invalid("compare needs vehicle counts of at least 2"));
        }
        if config.times.is_empty() || config.times.windows(2).any(|t| t[1] <= t[0]) || config.times[0] <= 0.0 {
            return Err(Error::invalid("compare times must be positive and increasing"));
        }
        if !(config.micro_dt > 0.0) {
            return Err(Error::invalid("compare needs micro_dt > 0"));
        }
        let params = map_micro_to_macro(base, config.z)?;
        let p = config.profile;
        let h = p.half_span(base.mass)?;
        let grid = Grid::new(p.center - h, p.center + h, config.cells)?;
        let ghost = (p.background, p.speed);
        let initial = MacroField::from_profile(
            grid,
            |x| p.rho(x),
            |x| p.v(x),
            Boundary::Inflow { left: ghost, right: ghost },
            params.v_star,
        )?;
        initial.check(&params)?;
        Ok(Self { base: base.clone(), params, grid, initial, config: config.clone() })
    }

    /// Model with `n` vehicles.
    pub fn model(&self, n: usize) -> LongitudinalModel {
        LongitudinalModel { n, ..self.base.clone() }
    }

    /// Macroscopic fields at the report times.
    pub fn macro_leg(&self) -> Result<Vec<MacroField>> {
        let mut fields = Vec::with_capacity(self.config.times.len());
        let mut cur = self.initial.clone();
        let mut t0 = 0.0;
        for &t in &self.config.times {
            let cfg = MacroConfig { t_end: t - t0, dt: None, snapshots: 1 };
            let run = simulate_macro(&cur, &self.params, &cfg)?;
            cur = run.snapshots.last().map(|s| s.1.clone()).expect("final snapshot");
            fields.push(cur.clone());
            t0 = t;
        }
        Ok(fields)
    }

    /// Single-lane samples at the report times for `n` vehicles.
    pub fn micro_leg(&self, n: usize) -> core::result::Result<Vec<LineSample>, SimError> {
        let model = self.model(n);
        let mut w = sample_platoon(&model, &self.config.profile, self.grid.x_max)?;
        let mut out = Vec::with_capacity(self.config.times.len());
        let mut t0 = 0.0;
        for &t in &self.config.times {
            let span = t - t0;
            let steps = libm::ceil(span / self.config.micro_dt - 1e-9).max(1.0) as usize;
            let cfg = IntegratorConfig::rk4(span / steps as f64, span, steps);
            let traj = longitudinal_simulate(&model, &w, &cfg)?;
            let mut last = traj.samples.last().cloned().expect("final sample");
            w = last.x.iter().chain(&last.v).copied().collect();
            last.t = t;
            out.push(last);
            t0 = t;
        }
        Ok(out)
    }

    /// Error rows for one vehicle count.
    pub fn errors(&self, n: usize, micro: &[LineSample], fields: &[MacroField]) -> Vec<ErrorRow> {
        micro
            .iter()
            .zip(fields)
            .map(|(s, f)| {
                let shift = self.params.v_star * s.t;
                let xs: Vec<f64> = s.x.iter().map(|x| x - shift).collect();
                // Densities live at x_2, ..., x_n.
                let (l2_rho, linf_rho, cells) = field_error(&self.grid, &xs[1..], &s.densities, &f.rho);
                let (l2_v, linf_v, _) = field_error(&self.grid, &xs[1..], &s.v[1..], &f.v);
                ErrorRow { n, t: s.t, l2_rho, linf_rho, l2_v, linf_v, cells }
            })
            .collect()
    }
}

/// L² and L∞ distance between cell values and the linear interpolant of
/// points given at decreasing positions, over the cells the points cover.
fn field_error(grid: &Grid, xs: &[f64], ys: &[f64], cells: &[f64]) -> (f64, f64, usize) {
    let dx = grid.dx();
    let (lo, hi) = (xs[xs.len() - 1], xs[0]);
    let mut j = xs.len() - 1;
    let (mut sq, mut sup, mut count) = (0.0, 0.0_f64, 0);
    for (k, &c) in cells.iter().enumerate() {
        let x = grid.center(k);
        if x < lo || x > hi {
            continue;
        }
        while j > 0 && xs[j - 1] < x {
            j -= 1;
        }
        let (x0, x1) = (xs[j], if j > 0 { xs[j - 1] } else { xs[j] });
        let (y0, y1) = (ys[j], if j > 0 { ys[j - 1] } else { ys[j] });
        let y = if x1 > x0 { y0 + (y1 - y0) * (x - x0) / (x1 - x0) } else { y0 };
        let e = (y - c).abs();
        sq += e * e * dx;
        sup = sup.max(e);
        count += 1;
    }
    (sqrt(sq), sup, count)
}

/// Runs the macro leg once and the micro leg for every `n`.
pub fn micro_macro_compare(base: &LongitudinalModel, config: &CompareConfig) -> core::result::Result<Vec<ErrorRow>, SimError> {
    let setup = CompareSetup::new(base, config)?;
    let fields = setup.macro_leg()?;
    let mut rows = Vec::new();
    for &n in &config.n_list {
        let micro = setup.micro_leg(n)?;
        rows.extend(setup.errors(n, &micro, &fields));
    }
    Ok(rows)
}

/// Checks that the error at the last report time does not increase with `n`.
pub fn non_increasing_in_n(rows: &[ErrorRow], t: f64) -> Result<bool> {
    let mut at: Vec<&ErrorRow> = rows.iter().filter(|r| r.t == t).collect();
    if at.is_empty() {
        return Err(Error::invalid(format!("no rows at t = {t}")));
    }
    at.sort_by_key(|r| r.n);
    Ok(at.windows(2).all(|p| p[1].l2_rho <= p[0].l2_rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::longitudinal::LongitudinalFamily;
    use crate::potential::{Kernel, PairPotential, Shape};
    use approx::assert_relative_eq;

    fn base() -> LongitudinalModel {
        LongitudinalModel {
            n: 2,
            mass: 100.0,
            min_gap: 5.59,
            lambda: 10.0,
            phi: PairPotential::Cubic { q1: 1e-4 },
            kernel: Kernel::Quadratic { q2: 1.6e-6 },
            v_max: 35.0,
            v_star: 30.0,
            family: LongitudinalFamily::Prcc { f: Shape::Linear { slope: 1.0 / 1225.0 }, g: Shape::IDENTITY },
        }
    }

    fn flat() -> BumpProfile {
        BumpProfile { background: 8.0, amplitude: 0.0, center: 0.0, width: 1.5, speed: 30.0, speed_amplitude: 0.0 }
    }

    #[test]
    fn half_span_holds_the_mass() {
        let p = BumpProfile { amplitude: 6.0, ..flat() };
        let h = p.half_span(100.0).unwrap();
        assert_relative_eq!(p.mass_within(h), 100.0, max_relative = 1e-12);
        assert_relative_eq!(flat().half_span(100.0).unwrap(), 6.25, max_relative = 1e-12);
    }

    #[test]
    fn sampled_densities_follow_the_profile() {
        let p = BumpProfile { amplitude: 6.0, ..flat() };
        let m = LongitudinalModel { n: 400, ..base() };
        let w = sample_platoon(&m, &p, 5.0).unwrap();
        for i in 1..400 {
            let s = w[i - 1] - w[i];
            let rho = m.density(s);
            assert!(rho > 0.0 && rho < m.mass / m.min_gap);
            assert!((rho - p.rho(w[i] + 0.5 * s)).abs() < 1e-3);
        }
    }

    #[test]
    fn equilibrium_profile_has_no_error() {
        let cfg = CompareConfig { n_list: vec![20, 40], profile: flat(), cells: 200, micro_dt: 1e-3, times: vec![0.5, 1.0], z: 0.0 };
        let rows = micro_macro_compare(&base(), &cfg).unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            assert!(r.cells > 150);
            assert!(r.linf_rho < 1e-9 && r.linf_v < 1e-9, "{r:?}");
        }
    }
}
