//! Runs a shipped scenario through the same path as the CLI and prints the manifest.
//!
//! cargo run --release --example scenario_run -- [scenario.toml] [command]

use std::path::PathBuf;

use proxaim::scenario::{load_scenario, run, Command};

fn main() -> proxaim::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/benchmark.toml")));
    let cmd = match args.next().as_deref() {
        None | Some("check-bellman") => Command::CheckBellman,
        Some("simulate") => Command::Simulate,
        Some("value") => Command::Value,
        Some("certify-lower") => Command::CertifyLower,
        Some(other) => {
            eprintln!("unsupported command '{other}' in this example");
            std::process::exit(2);
        }
    };
    let sc = load_scenario(&path)?;
    let out = std::env::temp_dir().join("proxaim-example-runs");
    let rec = run(cmd, &sc, &out)?;
    println!("{}", rec.dir.display());
    println!("{}", serde_json::to_string_pretty(&rec.manifest.summary).unwrap());
    Ok(())
}
