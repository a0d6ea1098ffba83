//! Sample-and-hold proximal aiming from a few starts, with the parameter search and
//! the per-step Hamiltonian audit.
//!
//! cargo run --release --example proximal_aiming

use std::sync::Arc;

use proxaim::aiming::{
    payoff_feedback, run_process, search_parameter_complex, FeedbackStrategy, Partition, ScenarioStart, SearchGrid,
};
use proxaim::benchmark::Band;
use proxaim::measure::ParticleMeasure;
use proxaim::models::{self, translation_value};

fn main() -> proxaim::Result<()> {
    let model = models::translation(1, 1.0);
    let dict = Arc::new(Band::default().dictionary()?);
    let starts = vec![
        ScenarioStart { label: "right".into(), s: 0.0, mu: ParticleMeasure::dirac(&[1.2])? },
        ScenarioStart { label: "inside".into(), s: 0.4, mu: ParticleMeasure::dirac(&[0.4])? },
    ];
    let eta = 0.2;
    let found = search_parameter_complex(&model, dict.clone(), &starts, eta, &SearchGrid::default(), 0.01)?;
    let c = found.complex;
    println!("complex: kappa {} eps {:.3e} alpha [{:.3}, {:.3}] after {} candidates", c.kappa, c.epsilon, c.alpha_lo, c.alpha_hi, found.tried);

    let strategy = FeedbackStrategy { dict, kappa: c.kappa, epsilon: c.epsilon };
    for st in &starts {
        let partition = Partition::with_max_spacing(st.s, 1.0, c.alpha_hi)?;
        let record = run_process(&model, &strategy, st.s, &st.mu, &partition, 0.01)?;
        let j = payoff_feedback(&model, st.s, &st.mu, &record, 0.01)?;
        println!(
            "\n{}: J = {:.6}, Val = {:.6}, worst gated audit {:?}",
            st.label,
            j,
            translation_value(1.0 - st.s, &st.mu),
            record.worst_gated_margin()
        );
        for a in &record.audit {
            println!("  s {:.2}  anchor t {:.2}  u {}  margin {:+.3e}  gated {}", a.s, a.anchor_t, a.chosen_u, a.hamiltonian_margin, a.gated);
        }
    }
    Ok(())
}
