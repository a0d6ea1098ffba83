//! Particle solution of the controlled continuity equation and its weak-form residuals.
//!
//! cargo run --example continuity_flow

use proxaim::dynamics::{growth_diagnostics, payoff_j, solve_continuity, weak_form_residual, Polynomial, RelaxedControl};
use proxaim::measure::ParticleMeasure;
use proxaim::models;

fn main() -> proxaim::Result<()> {
    let model = models::consensus(1, 1.0, 0.5, 0.1);
    let mu = ParticleMeasure::uniform(1, vec![-1.5, -0.2, 0.4, 2.0])?;
    // Push right for the first half, then hold.
    let xi = RelaxedControl::pure(vec![0.0, 0.5, 1.0], &[2, 1], model.n_controls())?;
    let step = 0.01;
    let traj = solve_continuity(&model, 0.0, 1.0, &mu, &xi, step)?;

    println!("t      positions");
    for k in (0..traj.len()).step_by(25) {
        let xs: Vec<String> = traj.positions(k).iter().map(|x| format!("{x:+.4}")).collect();
        println!("{:.2}   {}", traj.times()[k], xs.join(" "));
    }

    println!("\nweak-form residuals (bound {:.0e})", 10.0 * step * step);
    for phi in Polynomial::monomial_basis(1, 2) {
        println!("  degree {}: {:.3e}", phi.degree(), weak_form_residual(&model, &traj, &phi));
    }

    let growth = growth_diagnostics(&traj, model.growth_bounds())?;
    println!("\ngrowth within declared bounds: {}", growth.within_bounds());
    println!("payoff J = {:.6}", payoff_j(&model, 0.0, &mu, &xi, step)?);
    Ok(())
}
