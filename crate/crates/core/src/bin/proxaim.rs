use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use proxaim::scenario::{emit_plot_data, exit_code, load_scenario_with, run, Command, Overrides, RunManifest};

#[derive(Parser)]
#[command(name = "proxaim", version, about = "Mean-field control runs driven by scenario files")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the continuity equation under the scenario's control.
    Simulate(RunArgs),
    /// Exhaustive value search over piecewise-constant controls.
    Value(RunArgs),
    /// Run one sample-and-hold proximal aiming process.
    Aim(RunArgs),
    /// Moreau-Yosida envelopes, gaps and proximal probes of the dictionary.
    Regularize(RunArgs),
    /// Sub- and supersolution margins at the configured test points.
    CheckBellman(RunArgs),
    /// Feedback payoff against phi + eta on every start.
    CertifyUpper(RunArgs),
    /// Minimal payoff against psi on every start.
    CertifyLower(RunArgs),
    /// Search for an admissible parameter complex.
    SearchComplex(RunArgs),
    /// Emit long-format plot data for a finished run directory.
    Report {
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Parent directory for the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (command, args) = match cli.command {
        Cmd::Report { out } => {
            return match emit_plot_data(&out).and_then(|files| Ok((files, RunManifest::read(&out)?))) {
                Ok((files, manifest)) => {
                    for f in files {
                        println!("{}", out.join(f).display());
                    }
                    ExitCode::from(if manifest.passed { 0 } else { 1 })
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code(&e) as u8)
                }
            };
        }
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Value(a) => (Command::Value, a),
        Cmd::Aim(a) => (Command::Aim, a),
        Cmd::Regularize(a) => (Command::Regularize, a),
        Cmd::CheckBellman(a) => (Command::CheckBellman, a),
        Cmd::CertifyUpper(a) => (Command::CertifyUpper, a),
        Cmd::CertifyLower(a) => (Command::CertifyLower, a),
        Cmd::SearchComplex(a) => (Command::SearchComplex, a),
    };
    let overrides = Overrides {
        step: args.step,
        kappa: args.kappa,
        epsilon: args.epsilon,
        eta: args.eta,
        budget: args.budget,
        seed: args.seed,
    };
    let result = load_scenario_with(&args.scenario, &overrides).and_then(|sc| {
        let root = match (&args.out, &sc.config.out) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => sc.base_dir.join(o),
            (None, None) => PathBuf::from("runs"),
        };
        run(command, &sc, &root)
    });
    match result {
        Ok(rec) => {
            println!("{}", rec.dir.display());
            for (k, v) in &rec.manifest.summary {
                println!("  {k} = {v}");
            }
            println!("  status = {}", if rec.manifest.passed { "pass" } else { "check-failed" });
            ExitCode::from(if rec.manifest.passed { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
