use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use proxaim::aiming::{aim_control, run_process, FeedbackStrategy, Partition};
use proxaim::benchmark::Band;
use proxaim::dynamics::payoff_j;
use proxaim::measure::ParticleMeasure;
use proxaim::models;
use proxaim::nonsmooth::{check_prox_subgradient, random_probes};
use proxaim::value::{value_dp, ValueQuery};

#[test]
fn audit_is_reproducible_from_the_trajectory() {
    let model = models::translation(1, 1.0);
    let dict = Arc::new(Band::default().dictionary().unwrap());
    let strategy = FeedbackStrategy { dict: dict.clone(), kappa: 0.35, epsilon: 0.01 };
    let mu = ParticleMeasure::dirac(&[1.2]).unwrap();
    let partition = Partition::with_max_spacing(0.0, 1.0, 0.2).unwrap();
    let record = run_process(&model, &strategy, 0.0, &mu, &partition, 0.01).unwrap();
    let again = run_process(&model, &strategy, 0.0, &mu, &partition, 0.01).unwrap();
    assert_eq!(record.trajectory.times(), again.trajectory.times());
    for k in 0..record.trajectory.len() {
        assert_eq!(record.trajectory.positions(k), again.trajectory.positions(k));
    }

    let candidates = dict.points();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut gated = 0;
    for step in &record.audit {
        let k = record.trajectory.times().iter().position(|&t| t == step.s).unwrap();
        let state = record.trajectory.measure_at(k);
        let d = aim_control(&model, &strategy, step.s, &state).unwrap();
        assert_eq!(d.control, step.chosen_u);
        let best = d.objectives.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(d.objectives[step.chosen_u], best);
        if step.gated {
            gated += 1;
            let probes = random_probes(&d.pair.gamma, &candidates, 50, &mut rng);
            let rep = check_prox_subgradient(dict.as_ref(), &d.pair, &probes, Some(0.5 / (0.35 * 0.35)), 0.0).unwrap();
            assert!(rep.min_margin >= -1e-8, "step {}: {}", step.step, rep.min_margin);
        }
    }
    assert!(gated > 0);
}

#[test]
fn reported_control_attains_the_value() {
    let model = models::linear(1, 1.0, 0.5, models::axis_controls(1));
    let mu = ParticleMeasure::uniform(1, vec![-0.8, 0.3, 1.1]).unwrap();
    let res = value_dp(&model, &ValueQuery::uniform(&model, 0.0, mu.clone(), 6, 0.01)).unwrap();
    let j = payoff_j(&model, 0.0, &mu, &res.control, 0.01).unwrap();
    assert!((j - res.value).abs() <= 1e-12, "{j} vs {}", res.value);
}

#[test]
fn refining_the_control_mesh_does_not_raise_the_value() {
    let model = models::linear(1, 1.0, 0.5, models::axis_controls(1));
    let mu = ParticleMeasure::uniform(1, vec![-0.4, 0.9]).unwrap();
    let coarse = value_dp(&model, &ValueQuery::uniform(&model, 0.0, mu.clone(), 4, 0.01)).unwrap().value;
    let fine = value_dp(&model, &ValueQuery::uniform(&model, 0.0, mu, 8, 0.01)).unwrap().value;
    assert!(fine <= coarse + 1e-9, "{fine} > {coarse}");
}
