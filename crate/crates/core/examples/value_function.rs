//! Exhaustive value search on the translation benchmark, compared with the closed form.
//!
//! cargo run --release --example value_function

use proxaim::measure::ParticleMeasure;
use proxaim::models::{self, translation_value};
use proxaim::value::{dpp_residual, value_dp, ValueQuery, DEFAULT_BUDGET};

fn main() -> proxaim::Result<()> {
    let model = models::translation(1, 1.0);
    let cases = [
        ParticleMeasure::dirac(&[3.0])?,
        ParticleMeasure::dirac(&[0.5])?,
        ParticleMeasure::uniform(1, vec![-2.0, 2.0])?,
        ParticleMeasure::uniform(1, vec![0.2, 1.6, 2.5])?,
    ];
    println!("{:<28} {:>10} {:>10} {:>12}", "measure", "Val", "closed", "nodes");
    for mu in &cases {
        let res = value_dp(&model, &ValueQuery::uniform(&model, 0.0, mu.clone(), 10, 0.01))?;
        println!(
            "{:<28} {:>10.6} {:>10.6} {:>12}",
            format!("{:?}", mu.points()),
            res.value,
            translation_value(1.0, mu),
            res.stats.nodes_expanded
        );
    }

    // Splitting the horizon at 0.5 must not change the value.
    let r = dpp_residual(&model, 0.0, &cases[3], 0.5, 5, 5, 0.01, DEFAULT_BUDGET)?;
    println!("\ndynamic programming residual at theta = 0.5: {:.2e}", r.residual);
    Ok(())
}
