//! Sub- and supersolution margins of the exact value, and of a dictionary with a bump.
//!
//! cargo run --release --example bellman_margins

use proxaim::bellman::{subsolution_margin, supersolution_margin};
use proxaim::benchmark::{cone_bump, Band};
use proxaim::measure::ParticleMeasure;
use proxaim::models;

fn main() -> proxaim::Result<()> {
    let model = models::translation(1, 1.0);
    let band = Band::default();
    let (kappa, epsilon, tol) = (0.35, 1e-4, 1e-3);
    let points: Vec<(f64, ParticleMeasure)> = [(0.4, 0.6), (0.5, 0.5), (0.5, -0.7), (0.6, 0.4)]
        .iter()
        .map(|&(t, y)| (t, ParticleMeasure::dirac(&[y]).unwrap()))
        .collect();

    let exact = band.dictionary()?;
    let sub = subsolution_margin(&model, &exact, &points, kappa, epsilon, tol)?;
    let sup = supersolution_margin(&model, &exact, &points, kappa, epsilon, tol)?;
    println!("exact value: sub min {:.3e} ({}), super min {:.3e} ({})",
        sub.min_margin(), if sub.passes() { "pass" } else { "fail" },
        sup.min_margin(), if sup.passes() { "pass" } else { "fail" });

    // A raised bump just before (0.5, 0.5) breaks the subsolution inequality there.
    let bumped = band.dictionary_with(cone_bump(0.45, 0.5, 0.1, 0.05))?;
    let sub = subsolution_margin(&model, &bumped, &points, kappa, epsilon, tol)?;
    println!("raised bump: sub min {:.3e}, failing points {:?}", sub.min_margin(), sub.failing_points());
    Ok(())
}
