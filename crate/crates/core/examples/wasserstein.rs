//! Exact W2 between two small clouds, with the optimal plan.
//!
//! cargo run --example wasserstein

use proxaim::measure::ParticleMeasure;
use proxaim::transport::wasserstein2;

fn main() -> proxaim::Result<()> {
    let mu = ParticleMeasure::new(2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0], vec![0.5, 0.25, 0.25])?;
    let nu = ParticleMeasure::uniform(2, vec![2.0, 0.0, 0.0, 2.0])?;

    let ot = wasserstein2(&mu, &nu)?;
    println!("W2 = {:.12}  (squared cost {:.12})", ot.distance, ot.cost);
    println!("{:>4} {:>4} {:>8}", "i", "j", "mass");
    for e in &ot.plan.entries {
        println!("{:>4} {:>4} {:>8.4}", e.i, e.j, e.mass);
    }

    // Shifting both measures by the same vector leaves the distance unchanged.
    let shift = |x: &[f64], out: &mut [f64]| {
        out[0] = x[0] + 3.0;
        out[1] = x[1] - 1.0;
    };
    let moved = wasserstein2(&mu.pushforward(2, shift, false)?, &nu.pushforward(2, shift, false)?)?;
    println!("after a common shift: {:.12}", moved.distance);
    Ok(())
}
