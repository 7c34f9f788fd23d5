mod common;

use common::*;
use lqcharge::battery::{
    discretize, health_indicator, BatteryState, RcParams, SocBounds, REFERENCE_CAPACITY_C,
};
use lqcharge::fts::{fts_control, plan_fts, weight_schedule, ChargingObjective};
use lqcharge::kalman::{predictor_step, EstimatorState};
use lqcharge::linalg::{is_psd, spectral_radius};
use lqcharge::riccati::{dare_residual, solve_dare_control};
use lqcharge::sim::{run_scenario, Scenario};
use lqcharge::tracking::{backward_s_step, forward_s_step, make_reference, plan_ss_tracking};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = RcParams> {
    (
        1e3f64..2e5,
        1e2f64..2e4,
        1e-4f64..1e-2,
        1e-4f64..1e-2,
        1e-4f64..1e-2,
    )
        .prop_map(|(c_b, c_s, r_b, r_s, r_o)| RcParams {
            c_b,
            c_s,
            r_b,
            r_s,
            r_o,
        })
}

fn pack() -> (RcParams, SocBounds) {
    let p = RcParams::reference();
    (
        p,
        SocBounds::proportional(&p, REFERENCE_CAPACITY_C).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn discretization_conserves_charge(p in params(), ts in 0.05f64..20.0) {
        let sys = discretize(&p, ts).unwrap();
        for j in 0..2 {
            prop_assert!((sys.a[(0, j)] + sys.a[(1, j)] - 1.0).abs() <= 1e-12);
        }
        prop_assert!((sys.b.sum() - ts).abs() <= 1e-12 * ts.max(1.0));
    }

    #[test]
    fn dare_solutions_are_certified(seed in any::<u64>(), n in 1usize..5, m in 1usize..3) {
        let mut rng = rng(seed);
        let (a, b) = random_system(&mut rng, n, m);
        let q = random_spd(&mut rng, n, 0.1);
        let r = random_spd(&mut rng, m, 0.5);
        let sol = solve_dare_control(&a, &b, &q, &r).unwrap();
        prop_assert!(dare_residual(&a, &b, &q, &r, &sol.s).unwrap() <= 1e-10 * sol.s.amax().max(1.0));
        prop_assert!(spectral_radius(&(&a - &b * &sol.gain)) < 1.0);
        prop_assert!(is_psd(&sol.s, 1e-10));
    }

    #[test]
    fn predictor_covariance_stays_psd(seed in any::<u64>(), steps in 1usize..200) {
        let mut rng = rng(seed);
        let (p, _) = pack();
        let sys = discretize(&p, 1.0).unwrap();
        let sigma0 = random_spd(&mut rng, 2, 0.0) * 100.0;
        let mut est = EstimatorState::new(DVector::from_column_slice(&[1e4, 500.0]), sigma0).unwrap();
        let w = DMatrix::from_diagonal_element(2, 2, 1e-4);
        for k in 0..steps {
            let u = DVector::from_element(1, (k as f64).cos());
            let y = DVector::from_element(1, 0.1);
            est = predictor_step(&sys, &est, &u, &y, &w, &scalar(1e-6)).unwrap();
            prop_assert!(is_psd(&est.sigma, 1e-10));
        }
    }

    #[test]
    fn equal_time_constants_keep_reference_balanced(
        initial in 0.0f64..0.9, span in 0.01f64..0.1, steps in 2usize..5000, tau_frac in 0.01f64..10.0,
    ) {
        let (p, b) = pack();
        let sys = discretize(&p, 1.0).unwrap();
        let target = (initial + span).min(1.0);
        let obj = ChargingObjective::new(initial, target, steps as f64).unwrap();
        let tau = tau_frac * steps as f64;
        let refr = make_reference(&sys, &p, &b, &obj, tau, tau).unwrap();
        for r in &refr.states {
            prop_assert!(health_indicator(&BatteryState::from_vector(r), &p).abs() <= 1e-12);
        }
        for w in refr.states.windows(2) {
            prop_assert!(w[1][0] >= w[0][0] && w[1][1] >= w[0][1]);
        }
    }

    #[test]
    fn forward_and_backward_steps_invert(
        s in prop::array::uniform2(-1e3f64..1e3), r in prop::array::uniform2(0.0f64..3e4),
    ) {
        let (p, b) = pack();
        let sys = discretize(&p, 1.0).unwrap();
        let obj = ChargingObjective::new(0.3, 0.9, 20.0).unwrap();
        let refr = make_reference(&sys, &p, &b, &obj, 5.0, 5.0).unwrap();
        let q = DMatrix::from_diagonal(&nalgebra::dvector![1e-4, 1e-2]);
        let w = DMatrix::from_diagonal_element(2, 2, 1e-4);
        let plan = plan_ss_tracking(&sys, &refr.states, &q, &scalar(0.1), &w, &scalar(1e-6), None).unwrap();
        let s_next = DVector::from_column_slice(&s);
        let r_k = DVector::from_column_slice(&r);
        let s_k = backward_s_step(&plan, &s_next, &r_k);
        let back = forward_s_step(&plan, &s_k, &r_k);
        prop_assert!((&back - &s_next).amax() <= 1e-12 * s_k.amax().max(s_next.amax()));
    }

    #[test]
    fn fixed_terminal_state_is_hit(initial in 0.0f64..0.5, span in 0.05f64..0.5, steps in 20usize..800) {
        let (p, b) = pack();
        let sys = discretize(&p, 1.0).unwrap();
        let obj = ChargingObjective::new(initial, initial + span, steps as f64).unwrap();
        let weights = weight_schedule(steps, 0.1, 5e7).unwrap();
        let plan = plan_fts(&sys, &p, &b, &obj, &weights, 0.1, &DMatrix::zeros(2, 2)).unwrap();
        let mut x = lqcharge::battery::state_of_soc(initial, &b, &p).unwrap().to_vector();
        for k in 0..steps {
            let u = fts_control(&plan, &x, k).unwrap();
            x = sys.step(&x, &u);
        }
        prop_assert!((&x - &plan.x_bar).amax() <= 1e-9 * plan.x_bar.amax());
    }

    #[test]
    fn constant_current_bookkeeping(current in -5.0f64..5.0, steps in 1usize..2000, seed in any::<u64>()) {
        let mut sc = Scenario::from_toml_str(&format!(
            "[objective]\ninitial_soc = 0.3\ntarget_soc = 0.9\nduration = {steps}.0\n[strategy]\nkind = \"constant-current\"\ncurrent_a = {current:e}\n[noise]\nseed = {seed}\n"
        )).unwrap();
        let (noisy, _) = run_scenario(&sc).unwrap();
        prop_assert_eq!(&noisy, &run_scenario(&sc).unwrap().0);
        sc = sc.noise_free();
        let (trace, m) = run_scenario(&sc).unwrap();
        let (first, last) = (&trace.rows[0], trace.last().unwrap());
        let stored = last.qb_c + last.qs_c - first.qb_c - first.qs_c;
        prop_assert!((stored - m.charge_delivered_c).abs() <= 1e-8 * m.charge_delivered_c.abs().max(1e-3));
    }
}
