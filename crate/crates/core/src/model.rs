//! The closed-loop system description shared by energies, controllers and
//! the simulator.

use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::energy::ClfParams;
use crate::fleet::{validate_scenario, ConstraintFailure, PairMatrix, RoadSpec, VehicleSpec};
use crate::potential::PotentialSuite;

/// Which cruise controller closes the loop.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "snake_case", deny_unknown_fields))]
pub enum Controller {
    /// Newtonian cruise controller with lateral and longitudinal friction
    /// gains.
    Ncc { mu1: f64, mu2: f64 },
    /// Pseudo-relativistic cruise controller; its frictions are the suite's
    /// `f1` and `f2`.
    Prcc,
}

impl Controller {
    pub fn name(&self) -> &'static str {
        match self {
            Controller::Ncc { .. } => "ncc",
            Controller::Prcc => "prcc",
        }
    }
}

/// Road, fleet, potentials, energy constants and controller.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Model {
    pub road: RoadSpec,
    pub vehicles: Vec<VehicleSpec>,
    pub pairs: PairMatrix,
    pub suite: PotentialSuite,
    pub clf: ClfParams,
    pub controller: Controller,
}

impl Model {
    pub fn n(&self) -> usize {
        self.vehicles.len()
    }

    /// Structural parameter checks, see [`validate_scenario`].
    pub fn validate(&self) -> Vec<ConstraintFailure> {
        validate_scenario(&self.road, &self.vehicles, &self.pairs, self.suite.lambda, &self.clf)
    }
}
