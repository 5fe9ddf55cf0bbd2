//! Reference parameter sets for ten-vehicle platoons on a 14.4 m wide road
//! with a 35 m/s limit.

use alloc::vec;

use crate::energy::ClfParams;
use crate::fleet::{PairMatrix, RoadSpec, VehicleSpec};
use crate::model::{Controller, Model};
use crate::potential::{BoundaryPotential, Kernel, PairPotential, PotentialSuite, Shape};

pub const N: usize = 10;
pub const HALF_WIDTH: f64 = 7.2;
pub const V_MAX: f64 = 35.0;
pub const V_STAR: f64 = 30.0;
pub const PHI: f64 = 0.25;
pub const LAMBDA: f64 = 25.0;
pub const MIN_SEPARATION: f64 = 5.59;
pub const LATERAL_WEIGHT: f64 = 5.11;
pub const EPS: f64 = 0.2;
pub const BOUNDARY_C: f64 = 1.5;
pub const SIGMA: f64 = 2.7;
/// Lateral friction gain shared by both controllers.
pub const MU1: f64 = 0.4;

pub fn road() -> RoadSpec {
    RoadSpec { half_width: HALF_WIDTH, v_max: V_MAX, v_star: V_STAR, phi: PHI }
}

fn base(q1: f64, q2: f64, mu2: f64, controller: Controller) -> Model {
    Model {
        road: road(),
        vehicles: vec![VehicleSpec { sigma: SIGMA }; N],
        pairs: PairMatrix::uniform(N, LATERAL_WEIGHT, MIN_SEPARATION),
        suite: PotentialSuite {
            lambda: LAMBDA,
            pair: PairPotential::Cubic { q1 },
            boundary: BoundaryPotential::Quartic { c: BOUNDARY_C },
            kernel: Kernel::Quadratic { q2 },
            penalty: Shape::SmoothRamp { eps: EPS },
            f1: Shape::Linear { slope: mu2 },
            f2: Shape::Linear { slope: MU1 },
            g1: Shape::IDENTITY,
            g2: Shape::IDENTITY,
        },
        clf: ClfParams { a_penalty: 1.0, b: 1.0 },
        controller,
    }
}

fn ncc(q2: f64) -> Model {
    let mu2 = 1.0 / V_MAX;
    base(1e-3, q2, mu2, Controller::Ncc { mu1: MU1, mu2 })
}

fn prcc(q2: f64) -> Model {
    let s = V_MAX * V_MAX;
    base(1e-3 / s, q2 / s, 1.0 / s, Controller::Prcc)
}

pub fn ncc_viscous() -> Model {
    ncc(0.5)
}

pub fn ncc_inviscid() -> Model {
    ncc(0.0)
}

pub fn prcc_viscous() -> Model {
    prcc(0.5)
}

pub fn prcc_inviscid() -> Model {
    prcc(0.0)
}
