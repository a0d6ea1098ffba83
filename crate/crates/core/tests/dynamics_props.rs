use proptest::prelude::*;

use proxaim::dynamics::{solve_continuity, weak_form_residual, Polynomial, RelaxedControl};
use proxaim::measure::ParticleMeasure;
use proxaim::models;

fn cloud() -> impl Strategy<Value = ParticleMeasure> {
    prop::collection::vec(-2.0..2.0f64, 1..6).prop_map(|p| ParticleMeasure::uniform(1, p).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn translation_flow_is_exact(mu in cloud(), idx in prop::collection::vec(0usize..3, 1..5)) {
        let model = models::translation(1, 1.0);
        let xi = RelaxedControl::pure_uniform(0.0, 1.0, &idx, 3).unwrap();
        let traj = solve_continuity(&model, 0.0, 1.0, &mu, &xi, 0.01).unwrap();
        let shift: f64 = idx.iter().map(|&k| model.controls()[k][0]).sum::<f64>() / idx.len() as f64;
        for (x, x0) in traj.terminal().points().iter().zip(mu.points()) {
            prop_assert!((x - (x0 + shift)).abs() <= 1e-9);
        }
    }

    #[test]
    fn mass_and_order_are_preserved(mu in cloud(), idx in prop::collection::vec(0usize..3, 1..4)) {
        let model = models::consensus(1, 1.0, 0.5, 0.1);
        let xi = RelaxedControl::pure_uniform(0.0, 1.0, &idx, model.n_controls()).unwrap();
        let traj = solve_continuity(&model, 0.0, 1.0, &mu, &xi, 0.01).unwrap();
        let end = traj.terminal();
        prop_assert_eq!(end.weights(), mu.weights());
        for i in 0..mu.len() {
            for j in 0..mu.len() {
                if mu.point(i)[0] < mu.point(j)[0] {
                    prop_assert!(end.point(i)[0] <= end.point(j)[0]);
                }
            }
        }
    }

    #[test]
    fn weak_form_residual_is_second_order(mu in cloud(), idx in prop::collection::vec(0usize..3, 1..4)) {
        let model = models::linear(1, 1.0, 0.5, models::axis_controls(1));
        let xi = RelaxedControl::pure_uniform(0.0, 1.0, &idx, model.n_controls()).unwrap();
        let step = 0.01;
        let traj = solve_continuity(&model, 0.0, 1.0, &mu, &xi, step).unwrap();
        for phi in Polynomial::monomial_basis(1, 2) {
            prop_assert!(weak_form_residual(&model, &traj, &phi) <= 10.0 * step * step);
        }
    }
}

#[test]
fn contraction_matches_exponential_decay() {
    let model = models::contraction(1, 1.0);
    let mu = ParticleMeasure::uniform(1, vec![-1.5, 0.25, 2.0]).unwrap();
    let xi = RelaxedControl::pure_uniform(0.0, 1.0, &[0], 1).unwrap();
    let traj = solve_continuity(&model, 0.0, 1.0, &mu, &xi, 1e-3).unwrap();
    for (x, x0) in traj.terminal().points().iter().zip(mu.points()) {
        assert!((x - x0 * (-1.0f64).exp()).abs() < 1e-12);
    }
}
