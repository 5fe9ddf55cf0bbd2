//! Lane-free cruise controllers with Lyapunov energies, a closed-loop
//! microscopic simulator and the traffic-fluid PDEs induced by the
//! controllers.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the command
//! line and anything touching the operating system live in the companion
//! `trafficfluid` crate.

#![no_std]
#![forbid(unsafe_code)]
// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod compare;
pub mod control;
pub mod energy;
pub mod error;
pub mod fleet;
pub mod integrate;
mod interact;
pub mod longitudinal;
pub mod macro_model;
pub mod math;
pub mod microsim;
pub mod model;
pub mod potential;
pub mod presets;
pub mod spline;

pub use error::{Error, Result};
pub use model::{Controller, Model};
