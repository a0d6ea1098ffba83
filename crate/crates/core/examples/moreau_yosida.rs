//! Inf- and sup-envelopes of a sampled value function and the proximal pairs they produce.
//!
//! cargo run --release --example moreau_yosida

use proxaim::benchmark::Band;
use proxaim::measure::ParticleMeasure;
use proxaim::nonsmooth::{check_prox_subgradient, envelope_gap, proximal_pair_from_anchor, random_probes};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> proxaim::Result<()> {
    let dict = Band::default().dictionary()?;
    println!("{} entries, {} distinct measures, c0 = {:.4}", dict.len(), dict.measures().len(), dict.c0());

    println!("\n{:>6} {:>10} {:>10} {:>10}", "kappa", "gap", "rho1", "rho3");
    for kappa in [1.0, 0.5, 0.25, 0.125] {
        let g = envelope_gap(&dict, kappa);
        println!("{kappa:>6} {:>10.4} {:>10.4} {:>10.4}", g.gap, dict.rho1(kappa), g.rho3);
    }

    let kappa = 0.35;
    let (s, mu) = (0.5, ParticleMeasure::dirac(&[0.6])?);
    let lo = dict.inf_envelope(s, &mu, kappa)?;
    let hi = dict.sup_envelope(s, &mu, kappa)?;
    println!("\nat (0.5, delta_0.6): inf {:.6} <= phi <= sup {:.6}", lo.value, hi.value);

    let pair = proximal_pair_from_anchor(&lo)?;
    println!("anchor t = {:.2}, a = {:.4}, covectors:", pair.anchor_t, pair.a);
    for atom in pair.gamma.atoms() {
        println!("  x = {:?}  q = {:?}  mass {:.3}", atom.x, atom.q, atom.mass);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let probes = random_probes(&pair.gamma, &dict.points(), 50, &mut rng);
    let report = check_prox_subgradient(&dict, &pair, &probes, Some(0.5 / (kappa * kappa)), 0.0)?;
    println!("proximal inequality over 50 probes: min margin {:.3e}", report.min_margin);
    Ok(())
}
