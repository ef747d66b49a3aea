use ernn::autodiff::Activation;
use ernn::cells::CellParams;
use ernn::equilibrium::{
    implicit_state_jacobian, iterate_euler, oracle_equilibrium, residual_f, residual_jacobian,
    stability_spectrum,
};
use ernn::numerics::{gaussian, spectral_norm, Matrix, Rng, Vector};
use proptest::prelude::*;

struct Case {
    p: CellParams,
    h_prev: Vector,
    x: Vector,
}

fn case(seed: u64, dh: usize, u_norm: f64, eta: f64, act: Activation) -> Case {
    let mut rng = Rng::new(seed);
    let p = CellParams::ernn_random_u(&mut rng, dh, 3, u_norm, &[eta], act).unwrap();
    let h_prev = gaussian(&mut rng, dh, 0.5);
    let x = gaussian(&mut rng, 3, 1.0);
    Case { p, h_prev, x }
}

fn smooth_act() -> impl Strategy<Value = Activation> {
    prop::sample::select(vec![Activation::Tanh, Activation::Sigmoid])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_is_a_root(seed in any::<u64>(), dh in 1usize..=12, u in 0.05f64..0.95, act in smooth_act()) {
        let c = case(seed, dh, u, 1.0, act);
        let eq = oracle_equilibrium(&c.p, &c.h_prev, &c.x).unwrap();
        let f = residual_f(&c.p, &eq.h_star, &c.h_prev, &c.x).unwrap();
        prop_assert!(f.norm_inf() <= 1e-12, "{}", f.norm_inf());
        prop_assert_eq!(f.norm_inf(), eq.residual_norm);
    }

    #[test]
    fn implicit_jacobian_is_minus_identity(seed in any::<u64>(), dh in 1usize..=12, u in 0.05f64..0.95) {
        let c = case(seed, dh, u, 1.0, Activation::Tanh);
        let eq = oracle_equilibrium(&c.p, &c.h_prev, &c.x).unwrap();
        let j = implicit_state_jacobian(&c.p, &eq, &c.h_prev, &c.x).unwrap();
        prop_assert!(j.add(&Matrix::identity(dh)).unwrap().norm_inf() <= 1e-8);
    }

    #[test]
    fn ratios_respect_the_contraction_check(
        seed in any::<u64>(), dh in 1usize..=10, u in 0.05f64..0.95, eta in 0.1f64..1.2, act in smooth_act(),
    ) {
        let c = case(seed, dh, u, eta, act);
        let eq = oracle_equilibrium(&c.p, &c.h_prev, &c.x).unwrap();
        let r = iterate_euler(&c.p, &c.h_prev, &c.x, 15, &eq).unwrap();
        let checks: Vec<f64> = r.contraction_checks.iter().flatten().copied().collect();
        prop_assume!(checks.iter().all(|&v| v < 1.0));
        // The check bounds the region the iterates visit; a single iterate's
        // value only linearizes at that point.
        let bound = checks.iter().copied().fold(0.0, f64::max);
        for ratio in r.contraction_ratios.iter().flatten() {
            prop_assert!(*ratio <= bound + 0.05, "ratio {ratio} vs bound {bound}");
        }
    }

    #[test]
    fn descent_condition_implies_smaller_residual(
        seed in any::<u64>(), dh in 1usize..=10, u in 0.05f64..0.95, eta in 0.05f64..1.5, act in smooth_act(),
    ) {
        let c = case(seed, dh, u, eta, act);
        let eq = oracle_equilibrium(&c.p, &c.h_prev, &c.x).unwrap();
        let r = iterate_euler(&c.p, &c.h_prev, &c.x, 10, &eq).unwrap();
        for i in 0..10 {
            // Skip iterates already at rounding level.
            if r.descent_condition_holds[i] == Some(true) && r.residual_norms[i] > 1e-12 {
                prop_assert!(r.residual_norms[i + 1] < r.residual_norms[i],
                    "iterate {i}: {} -> {}", r.residual_norms[i], r.residual_norms[i + 1]);
            }
        }
    }

    #[test]
    fn eigenvalues_obey_the_norm_bound(
        seed in any::<u64>(), dh in 1usize..=12, u in 0.05f64..2.0, act in smooth_act(), gamma in 0.5f64..2.0,
    ) {
        let mut c = case(seed, dh, u, 1.0, act);
        c.p.gamma = gamma;
        let h = gaussian(&mut Rng::new(seed ^ 1), dh, 1.0);
        let jac = residual_jacobian(&c.p, &h, &c.h_prev, &c.x).unwrap();
        // ∇φ·P·U = ∇F + γI.
        let pu = jac.add(&Matrix::identity(dh).scale(gamma)).unwrap();
        let bound = -(gamma - spectral_norm(&pu)) + 1e-8;
        let s = stability_spectrum(&c.p, &h, &c.h_prev, &c.x).unwrap();
        prop_assert!(s.abscissa() <= bound, "{} > {bound}", s.abscissa());
    }
}
