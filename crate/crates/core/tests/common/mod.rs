//! Helpers shared by the integration tests.

#![allow(dead_code)]

use rand::Rng;
use trafficfluid_core::fleet::{in_state_space, FleetState};
use trafficfluid_core::Model;

/// Uniform draw from the admissible set, away from its edges by a small
/// margin: longitudinal gaps in `[1.02 L, 1.1 λ]`, `|y| < 0.95a`,
/// `|θ| < 0.95φ` and `v ∈ (0.02, 0.98) v_max`.
pub fn random_state<R: Rng>(model: &Model, rng: &mut R) -> FleetState {
    let n = model.n();
    let road = model.road;
    let l = model.pairs.max_l();
    let lambda = model.suite.lambda;
    loop {
        let mut x = vec![0.0; n];
        for i in 1..n {
            x[i] = x[i - 1] - rng.gen_range(1.02 * l..1.1 * lambda);
        }
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.95..0.95) * road.half_width).collect();
        let th: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.95..0.95) * road.phi).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.02..0.98) * road.v_max).collect();
        let s = FleetState::from_components(&x, &y, &th, &v).expect("lengths match");
        if in_state_space(&s, &road, &model.pairs).is_admissible() {
            return s;
        }
    }
}
