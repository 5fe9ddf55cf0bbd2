mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trafficfluid_core::energy::{dissipation_delta, eval_h_r, grad_h_r};
use trafficfluid_core::fleet::distance;
use trafficfluid_core::longitudinal::{LongitudinalFamily, LongitudinalModel};
use trafficfluid_core::macro_model::{map_micro_to_macro, pde_step, stable_dt, Boundary, Grid, MacroField, SpeedTransform};
use trafficfluid_core::microsim::closed_loop_rhs;
use trafficfluid_core::potential::{Kernel, PairPotential, Shape};
use trafficfluid_core::presets;

fn line_model() -> LongitudinalModel {
    LongitudinalModel {
        n: 2,
        mass: 100.0,
        min_gap: 5.59,
        lambda: 10.0,
        phi: PairPotential::Cubic { q1: 1e-4 },
        kernel: Kernel::Quadratic { q2: 1.6e-6 },
        v_max: presets::V_MAX,
        v_star: presets::V_STAR,
        family: LongitudinalFamily::Prcc { f: Shape::Linear { slope: 1.0 / 1225.0 }, g: Shape::IDENTITY },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn weighted_distance_is_symmetric_and_dominates_the_gap(dx in -50.0..50.0f64, dy in -14.0..14.0f64, p in 1.0..10.0f64) {
        let d = distance(dx, dy, p);
        prop_assert_eq!(d, distance(-dx, -dy, p));
        prop_assert!(d >= dx.abs());
        prop_assert!(d >= p.sqrt() * dy.abs() * (1.0 - 1e-15));
    }

    #[test]
    fn speed_transform_is_increasing_and_invertible(a in 0.5..34.5f64, b in 0.5..34.5f64) {
        let q = SpeedTransform::new(presets::V_MAX, presets::V_STAR).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-9);
        prop_assert!(q.eval(lo).unwrap() < q.eval(hi).unwrap());
        let back = q.inverse(q.eval(a).unwrap()).unwrap();
        prop_assert!((back - a).abs() < 1e-9 * a.max(1.0));
    }

    #[test]
    fn pressure_does_not_decrease_with_density(a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let p = map_micro_to_macro(&line_model(), 0.0).unwrap();
        let at = |s: f64| 1e-3 + s * (p.rho_max * (1.0 - 1e-6) - 1e-3);
        let (lo, hi) = if a < b { (at(a), at(b)) } else { (at(b), at(a)) };
        prop_assert!(p.pressure(lo).unwrap() <= p.pressure(hi).unwrap());
        prop_assert!(p.viscosity(lo).unwrap() >= 0.0);
    }

    #[test]
    fn periodic_step_conserves_mass(amp in 0.0..8.0f64, width in 0.5..3.0f64, dv in -2.0..2.0f64) {
        let p = map_micro_to_macro(&line_model(), 0.0).unwrap();
        let grid = Grid::new(-10.0, 10.0, 200).unwrap();
        let mut field = MacroField::from_profile(
            grid,
            |x| 8.0 + amp * (-(x / width) * (x / width)).exp(),
            |x| p.v_star + dv * (-(x / width) * (x / width)).exp(),
            Boundary::Periodic,
            p.v_star,
        )
        .unwrap();
        let m0 = field.mass();
        for _ in 0..20 {
            let dt = stable_dt(&field, &p).unwrap();
            field = pde_step(&field, &p, dt).unwrap();
        }
        prop_assert!((field.mass() - m0).abs() <= 1e-12 * m0);
    }

    #[test]
    fn prcc_energy_decreases_at_the_dissipation_rate(seed in any::<u64>()) {
        let model = presets::prcc_viscous();
        let s = common::random_state(&model, &mut ChaCha8Rng::seed_from_u64(seed));
        let dw = closed_loop_rhs(&model, &s).unwrap();
        let rate: f64 = grad_h_r(&model, &s).unwrap().iter().zip(&dw).map(|(g, w)| g * w).sum();
        let delta = dissipation_delta(&model, &s).unwrap();
        prop_assert!(delta >= 0.0);
        prop_assert!((rate + delta).abs() <= 1e-8 * delta.max(1e-12));
        prop_assert!(eval_h_r(&model, &s).unwrap() >= 0.0);
    }
}
