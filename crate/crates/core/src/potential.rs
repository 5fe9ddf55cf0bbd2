//! Interaction potentials, road-boundary potentials, viscous kernels and
//! the scalar shaping functions used by the controllers.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::{PairMatrix, RoadSpec};
use crate::math::sqrt;
use crate::spline::Spline;

/// Distance to a singularity below which evaluation is refused.
pub const SINGULAR_GAP: f64 = 1e-12;

/// Repulsive pair potential `V(d)` with a blow-up at the minimum separation
/// `L` and compact support `(L, λ]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "snake_case", deny_unknown_fields))]
pub enum PairPotential {
    /// `V(d) = q1 (λ - d)^3 / (d - L)`.
    Cubic { q1: f64 },
}

impl PairPotential {
    /// Value and derivative at `d` for minimum separation `l` and cutoff
    /// `lambda`.
    #[inline]
    pub fn eval(&self, d: f64, l: f64, lambda: f64) -> Result<(f64, f64)> {
        if !(d - l > SINGULAR_GAP) {
            return Err(Error::domain(format!("pair potential needs d > L, got d = {d}, L = {l}")));
        }
        if d >= lambda {
            return Ok((0.0, 0.0));
        }
        match *self {
            PairPotential::Cubic { q1 } => {
                let s = lambda - d;
                let g = d - l;
                let v = q1 * s * s * s / g;
                let dv = -q1 * s * s * (3.0 * g + s) / (g * g);
                Ok((v, dv))
            }
        }
    }

    /// Second derivative at `d`.
    pub fn second_derivative(&self, d: f64, l: f64, lambda: f64) -> Result<f64> {
        if !(d - l > SINGULAR_GAP) {
            return Err(Error::domain(format!("pair potential needs d > L, got d = {d}, L = {l}")));
        }
        if d >= lambda {
            return Ok(0.0);
        }
        match *self {
            PairPotential::Cubic { q1 } => {
                let s = lambda - d;
                let g = d - l;
                Ok(2.0 * q1 * s * (3.0 * g * g + 3.0 * s * g + s * s) / (g * g * g))
            }
        }
    }
}

/// Road-boundary potential `U(y)`, zero on a central band and blowing up
/// at `|y| = a`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "snake_case", deny_unknown_fields))]
pub enum BoundaryPotential {
    /// `U(y) = ((a^2 - y^2)^{-1} - c / a^2)^4` outside the flat band
    /// `|y| <= a sqrt((c - 1) / c)`.
    Quartic { c: f64 },
}

impl BoundaryPotential {
    /// Half width of the band where `U` vanishes identically.
    pub fn flat_half_width(&self, a: f64) -> f64 {
        match *self {
            BoundaryPotential::Quartic { c } if c > 1.0 => a * sqrt((c - 1.0) / c),
            BoundaryPotential::Quartic { .. } => 0.0,
        }
    }

    #[inline]
    pub fn eval(&self, y: f64, a: f64) -> Result<(f64, f64)> {
        if !(a - y.abs() > SINGULAR_GAP) {
            return Err(Error::domain(format!("boundary potential needs |y| < a = {a}, got y = {y}")));
        }
        match *self {
            BoundaryPotential::Quartic { c } => {
                if c >= 1.0 && y.abs() <= self.flat_half_width(a) {
                    return Ok((0.0, 0.0));
                }
                let den = a * a - y * y;
                let x = 1.0 / den - c / (a * a);
                let x3 = x * x * x;
                Ok((x3 * x, 4.0 * x3 * 2.0 * y / (den * den)))
            }
        }
    }
}

/// Viscous coupling kernel `κ(d)`, supported on `d < λ`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "snake_case", deny_unknown_fields))]
pub enum Kernel {
    /// `κ(d) = q2 (λ - d)^2`.
    Quadratic { q2: f64 },
    /// Natural cubic spline through user knots, cut off at `λ`.
    Tabulated { knots: Spline },
}

impl Kernel {
    pub const ZERO: Kernel = Kernel::Quadratic { q2: 0.0 };

    /// True when the kernel vanishes identically.
    pub fn is_zero(&self) -> bool {
        matches!(*self, Kernel::Quadratic { q2 } if q2 == 0.0)
    }

    #[inline]
    pub fn eval(&self, d: f64, lambda: f64) -> f64 {
        if d >= lambda {
            return 0.0;
        }
        match self {
            Kernel::Quadratic { q2 } => {
                let s = lambda - d;
                q2 * s * s
            }
            Kernel::Tabulated { knots } => knots.eval(d).0,
        }
    }
}

/// Scalar shaping function with its derivative.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "snake_case", deny_unknown_fields))]
pub enum Shape {
    /// `s -> slope * s`.
    Linear { slope: f64 },
    /// C¹ smoothing of `max(0, x)`: zero below `-ε`, quadratic on `(-ε, 0)`
    /// and `x + ε/2` above zero.
    SmoothRamp { eps: f64 },
    /// `max(0, x)` itself. It is only C⁰ and exists to exercise validation.
    Ramp,
    /// Natural cubic spline through user knots.
    Tabulated { knots: Spline },
}

impl Shape {
    pub const IDENTITY: Shape = Shape::Linear { slope: 1.0 };

    #[inline]
    pub fn eval(&self, x: f64) -> (f64, f64) {
        match self {
            Shape::Linear { slope } => (slope * x, *slope),
            Shape::SmoothRamp { eps } => {
                let e = *eps;
                if x <= -e {
                    (0.0, 0.0)
                } else if x < 0.0 {
                    ((x + e) * (x + e) / (2.0 * e), (x + e) / e)
                } else {
                    ((e * e + 2.0 * e * x) / (2.0 * e), 1.0)
                }
            }
            Shape::Ramp => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Shape::Tabulated { knots } => knots.eval(x),
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.eval(x).0
    }
}

/// Every function the controllers and energies depend on.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct PotentialSuite {
    /// Interaction radius `λ`.
    pub lambda: f64,
    /// Pair potential `V`.
    pub pair: PairPotential,
    /// Road-boundary potential `U`.
    pub boundary: BoundaryPotential,
    /// Viscous kernel `κ`.
    pub kernel: Kernel,
    /// Smooth penalty `r` with `r(x) >= max(0, x)`.
    pub penalty: Shape,
    /// Longitudinal friction `f1`.
    pub f1: Shape,
    /// Lateral friction `f2`.
    pub f2: Shape,
    /// Longitudinal viscous response `g1`.
    pub g1: Shape,
    /// Lateral viscous response `g2`.
    pub g2: Shape,
}

impl PotentialSuite {
    pub fn eval_v(&self, d: f64, l: f64) -> Result<(f64, f64)> {
        self.pair.eval(d, l, self.lambda)
    }

    pub fn eval_u(&self, y: f64, a: f64) -> Result<(f64, f64)> {
        self.boundary.eval(y, a)
    }

    /// Kernel value for a pair with minimum separation `l`.
    pub fn eval_kappa(&self, d: f64, l: f64) -> Result<f64> {
        if !(d - l > SINGULAR_GAP) {
            return Err(Error::domain(format!("kernel needs d > L, got d = {d}, L = {l}")));
        }
        Ok(self.kernel.eval(d, self.lambda))
    }

    pub fn eval_r(&self, x: f64) -> (f64, f64) {
        self.penalty.eval(x)
    }

    pub fn is_inviscid(&self) -> bool {
        self.kernel.is_zero()
    }
}

/// Result of one axiom check.
#[derive(Debug, Clone, PartialEq)]
pub struct AxiomCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of [`validate_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub checks: Vec<AxiomCheck>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AxiomCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&AxiomCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Value a potential must exceed near its singularity to count as
/// divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;
/// Largest allowed jump of a derivative across a point for C¹ checks.
pub const C1_JUMP_TOL: f64 = 1e-8;

/// Numerically checks the structural axioms of a suite on a grid with
/// `resolution` points per range.
pub fn validate_suite(suite: &PotentialSuite, road: &RoadSpec, pairs: &PairMatrix, resolution: usize) -> SuiteReport {
    let res = resolution.max(8);
    let lambda = suite.lambda;
    let a = road.half_width;
    let mut checks = Vec::new();
    let mut push = |name: &'static str, fail: Option<String>| {
        checks.push(AxiomCheck { name, passed: fail.is_none(), detail: fail.unwrap_or_default() });
    };

    let max_l = pairs.max_l();
    push(
        "interaction radius exceeds separations",
        (!(lambda > max_l)).then(|| format!("lambda = {lambda} <= max L = {max_l}")),
    );

    let mut ls: Vec<f64> = Vec::new();
    for i in 0..pairs.n() {
        for j in (i + 1)..pairs.n() {
            let l = pairs.l(i, j);
            if !ls.contains(&l) {
                ls.push(l);
            }
        }
    }
    if ls.is_empty() {
        ls.push(max_l);
    }

    let mut nonneg = None;
    let mut cutoff = None;
    let mut diverge = None;
    let mut smooth = None;
    for &l in &ls {
        if !(lambda > l) {
            continue;
        }
        for k in 1..res {
            let d = l + (lambda - l) * k as f64 / res as f64;
            match suite.eval_v(d, l) {
                Ok((v, _)) if v >= 0.0 => {}
                Ok((v, _)) => nonneg = Some(format!("V({d}) = {v} < 0")),
                Err(e) => nonneg = Some(format!("{e}")),
            }
        }
        for k in 0..res {
            let d = lambda * (1.0 + k as f64 / res as f64);
            if suite.eval_v(d, l) != Ok((0.0, 0.0)) {
                cutoff = Some(format!("V or V' is nonzero at d = {d}"));
            }
        }
        let mut prev = f64::NEG_INFINITY;
        for k in 3..=11 {
            let d = l + libm::pow(10.0, -(k as f64));
            match suite.eval_v(d, l) {
                Ok((v, _)) if v > prev => prev = v,
                _ => {
                    diverge = Some(format!("V does not grow towards L = {l}"));
                    break;
                }
            }
        }
        if diverge.is_none() && !(prev >= DIVERGENCE_THRESHOLD) {
            diverge = Some(format!("V(L + 1e-11) = {prev} stays below {DIVERGENCE_THRESHOLD}"));
        }
        let h = 1e-10 * lambda.max(1.0);
        if let Ok((_, left)) = suite.eval_v(lambda - h, l) {
            if left.abs() > C1_JUMP_TOL {
                smooth = Some(format!("V' jumps by {left} at lambda"));
            }
        }
    }
    push("pair potential is nonnegative", nonneg);
    push("pair potential vanishes beyond lambda", cutoff);
    push("pair potential diverges at the minimum separation", diverge);
    push("pair potential is C1 at lambda", smooth);

    let u0 = suite.eval_u(0.0, a);
    push(
        "boundary potential vanishes at the centre",
        (u0 != Ok((0.0, 0.0))).then(|| format!("U(0) = {u0:?}")),
    );
    let mut u_neg = None;
    for k in 0..res {
        let y = a * (k as f64 / res as f64) * (1.0 - 1e-6);
        for s in [y, -y] {
            match suite.eval_u(s, a) {
                Ok((u, _)) if u >= 0.0 => {}
                other => u_neg = Some(format!("U({s}) = {other:?}")),
            }
        }
    }
    push("boundary potential is nonnegative", u_neg);
    let mut u_div = None;
    for sign in [1.0, -1.0] {
        let mut prev = f64::NEG_INFINITY;
        for k in 3..=11 {
            let y = sign * a * (1.0 - libm::pow(10.0, -(k as f64)));
            match suite.eval_u(y, a) {
                Ok((u, _)) if u > prev => prev = u,
                _ => {
                    u_div = Some(format!("U does not grow towards y = {}", sign * a));
                    break;
                }
            }
        }
        if u_div.is_none() && !(prev >= DIVERGENCE_THRESHOLD) {
            u_div = Some(format!("U near the edge is only {prev}"));
        }
    }
    push("boundary potential diverges at the road edge", u_div);
    let mut u_c1 = None;
    let flat = suite.boundary.flat_half_width(a);
    if flat > 0.0 {
        let h = 1e-10 * a;
        if let (Ok((_, l)), Ok((_, r))) = (suite.eval_u(flat - h, a), suite.eval_u(flat + h, a)) {
            if (r - l).abs() > C1_JUMP_TOL {
                u_c1 = Some(format!("U' jumps by {} at the flat band edge", r - l));
            }
        }
    }
    push("boundary potential is C1", u_c1);

    let lo_l = ls.iter().cloned().fold(f64::INFINITY, f64::min).min(lambda);
    let mut k_neg = None;
    for k in 0..=res {
        let d = lo_l + (lambda - lo_l) * k as f64 / res as f64;
        let kap = suite.kernel.eval(d, lambda);
        if !(kap >= 0.0) {
            k_neg = Some(format!("kappa({d}) = {kap} < 0"));
        }
    }
    push("kernel is nonnegative", k_neg);
    let mut k_cut = None;
    for k in 0..res {
        let d = lambda * (1.0 + k as f64 / res as f64);
        if suite.kernel.eval(d, lambda) != 0.0 {
            k_cut = Some(format!("kappa({d}) is nonzero"));
        }
    }
    let edge = suite.kernel.eval(lambda - 1e-10 * lambda.max(1.0), lambda);
    if edge.abs() > 1e-6 {
        k_cut = Some(format!("kappa jumps by {edge} at lambda"));
    }
    push("kernel vanishes beyond lambda", k_cut);

    let span = road.v_max;
    let grid = |k: usize| -span + 2.0 * span * k as f64 / res as f64;

    let mut r_dom = None;
    let mut r_c1 = None;
    let eps_scale = match suite.penalty {
        Shape::SmoothRamp { eps } => eps,
        _ => 1.0,
    };
    let mut pts: Vec<f64> = (0..=res).map(grid).collect();
    pts.extend((0..=res).map(|k| -2.0 * eps_scale + 4.0 * eps_scale * k as f64 / res as f64));
    pts.extend([0.0, eps_scale, -eps_scale]);
    if let Shape::Tabulated { knots } = &suite.penalty {
        pts.extend_from_slice(knots.knots().0);
    }
    for &x in &pts {
        let r = suite.eval_r(x).0;
        if !(r >= x.max(0.0)) {
            r_dom = Some(format!("r({x}) = {r} < max(0, x)"));
        }
        let h = 1e-10 * x.abs().max(1.0);
        let jump = suite.eval_r(x + h).1 - suite.eval_r(x - h).1;
        if jump.abs() > C1_JUMP_TOL {
            r_c1 = Some(format!("r' jumps by {jump} at x = {x}"));
        }
    }
    push("penalty dominates the positive part", r_dom);
    push("penalty is C1", r_c1);

    for (name, f) in [("friction f1 is sign definite", &suite.f1), ("friction f2 is sign definite", &suite.f2)] {
        let mut fail = None;
        if f.value(0.0) != 0.0 {
            fail = Some(format!("f(0) = {}", f.value(0.0)));
        }
        for k in 0..=res {
            let x = grid(k);
            if x != 0.0 && !(x * f.value(x) > 0.0) {
                fail = Some(format!("x f(x) <= 0 at x = {x}"));
            }
        }
        push(name, fail);
    }
    for (name, g) in [("response g1 is increasing", &suite.g1), ("response g2 is increasing", &suite.g2)] {
        let mut fail = None;
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=res {
            let x = grid(k);
            let (v, d) = g.eval(x);
            if !(d > 0.0) || !(v > prev) {
                fail = Some(format!("g is not increasing at x = {x}"));
            }
            prev = v;
        }
        push(name, fail);
    }

    SuiteReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_relative_eq;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6 * x.abs().max(1.0);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn cubic_pair_potential_examples() {
        let v = PairPotential::Cubic { q1: 1e-3 };
        assert_eq!(v.eval(26.0, 5.59, 25.0), Ok((0.0, 0.0)));
        assert!(v.eval(5.59 + 1e-9, 5.59, 25.0).unwrap().0 > 1e6);
        assert!(v.eval(5.59, 5.59, 25.0).is_err());
        let (val, der) = v.eval(10.0, 5.59, 25.0).unwrap();
        assert_relative_eq!(val, 1e-3 * 15.0f64.powi(3) / 4.41, max_relative = 1e-14);
        let mid = 0.5 * (5.59 + 25.0);
        assert_relative_eq!(v.eval(mid, 5.59, 25.0).unwrap().0, 1e-3 * 9.705 * 9.705, max_relative = 1e-12);
        assert_relative_eq!(der, fd(|d| v.eval(d, 5.59, 25.0).unwrap().0, 10.0), max_relative = 1e-7);
    }

    #[test]
    fn cubic_second_derivative_matches_differences() {
        let v = PairPotential::Cubic { q1: 1e-3 };
        for d in [6.0, 10.0, 20.0, 24.9] {
            let fd2 = fd(|x| v.eval(x, 5.59, 25.0).unwrap().1, d);
            assert_relative_eq!(v.second_derivative(d, 5.59, 25.0).unwrap(), fd2, max_relative = 1e-6);
        }
        assert_eq!(v.second_derivative(25.0, 5.59, 25.0), Ok(0.0));
    }

    #[test]
    fn quartic_boundary_examples() {
        let u = BoundaryPotential::Quartic { c: 1.5 };
        assert_eq!(u.eval(0.0, 7.2), Ok((0.0, 0.0)));
        assert_eq!(u.eval(4.0, 7.2), Ok((0.0, 0.0)));
        assert!(u.eval(7.2, 7.2).is_err());
        assert!(u.eval(7.2 - 1e-9, 7.2).unwrap().0 > 1e6);
        for y in [5.0, -6.5, 7.0] {
            let (_, der) = u.eval(y, 7.2).unwrap();
            assert_relative_eq!(der, fd(|s| u.eval(s, 7.2).unwrap().0, y), max_relative = 1e-6);
        }
        assert_relative_eq!(u.flat_half_width(7.2), 7.2 * libm::sqrt(1.0 / 3.0));
    }

    #[test]
    fn smooth_ramp_branches() {
        let r = Shape::SmoothRamp { eps: 0.2 };
        assert_eq!(r.eval(-0.3), (0.0, 0.0));
        assert_relative_eq!(r.eval(-0.1).0, 0.01 / 0.4);
        assert_relative_eq!(r.eval(1.0).0, (0.04 + 0.4) / 0.4);
        assert_relative_eq!(r.eval(0.0).0, 0.1);
        for x in [-0.15, -0.05, 0.3] {
            assert_relative_eq!(r.eval(x).1, fd(|s| r.eval(s).0, x), max_relative = 1e-6);
        }
    }

    #[test]
    fn kernel_has_compact_support() {
        let k = Kernel::Quadratic { q2: 0.5 };
        assert_eq!(k.eval(25.0, 25.0), 0.0);
        assert_relative_eq!(k.eval(15.0, 25.0), 50.0);
        assert_relative_eq!(k.eval(15.295, 25.0), 0.5 * 9.705 * 9.705, max_relative = 1e-12);
        assert!(Kernel::ZERO.is_zero());
    }

    #[test]
    fn default_suites_pass_validation() {
        for (suite, road, pairs) in [presets::ncc_viscous(), presets::prcc_inviscid()].map(|s| (s.suite, s.road, s.pairs)) {
            let rep = validate_suite(&suite, &road, &pairs, 200);
            let fails: Vec<_> = rep.failures().collect();
            assert!(fails.is_empty(), "{fails:?}");
        }
    }

    #[test]
    fn plain_ramp_fails_c1() {
        let mut m = presets::ncc_viscous();
        m.suite.penalty = Shape::Ramp;
        let rep = validate_suite(&m.suite, &m.road, &m.pairs, 200);
        assert!(!rep.check("penalty is C1").unwrap().passed);
        assert!(rep.check("penalty dominates the positive part").unwrap().passed);
    }

    #[test]
    fn decreasing_response_fails() {
        let mut m = presets::prcc_viscous();
        m.suite.g1 = Shape::Linear { slope: -1.0 };
        let rep = validate_suite(&m.suite, &m.road, &m.pairs, 200);
        assert!(!rep.check("response g1 is increasing").unwrap().passed);
        assert_eq!(rep.failures().count(), 1);
    }

    #[test]
    fn short_radius_fails() {
        let mut m = presets::prcc_viscous();
        m.suite.lambda = 5.0;
        let rep = validate_suite(&m.suite, &m.road, &m.pairs, 50);
        assert!(!rep.check("interaction radius exceeds separations").unwrap().passed);
    }
}
