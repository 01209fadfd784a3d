use std::path::PathBuf;
use std::process::ExitCode;

use blowup_lab::config::ExperimentConfig;
use blowup_lab::pipeline::{config_rejected, execute, exit, Command, RunOptions};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "blowup-lab",
    version,
    about = "Blow-up curve experiments for the damped wave equation with derivative nonlinearity"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate the standing assumptions only
    Assumptions(Common),
    /// Spatially homogeneous ODE oracle and T1
    Ode(Common),
    /// Characteristic solve (plus Picard sweeps if configured)
    Solve(Common),
    /// Blow-up curve extraction and diagnostics
    Curve(Common),
    /// Rate exponent fit and two-sided bounds
    Rates(Common),
    /// Self-similar profile convergence
    Profile(Common),
    /// Refinement study at h, h/2, h/4
    Convergence(Common),
    /// Every stage enabled in the config's outputs section
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON)
    config: PathBuf,
    /// Output directory (default: outputs.dir from the config, else ./out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress progress output
    #[arg(long)]
    quiet: bool,
    /// Seed for randomized probes
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Assumptions(c) => (Command::Assumptions, c),
        Cmd::Ode(c) => (Command::Ode, c),
        Cmd::Solve(c) => (Command::Solve, c),
        Cmd::Curve(c) => (Command::Curve, c),
        Cmd::Rates(c) => (Command::Rates, c),
        Cmd::Profile(c) => (Command::Profile, c),
        Cmd::Convergence(c) => (Command::Convergence, c),
        Cmd::Run(c) => (Command::Run, c),
    };
    let text = match std::fs::read_to_string(&common.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", common.config.display());
            return ExitCode::from(exit::CONFIG as u8);
        }
    };
    let parsed = ExperimentConfig::from_json(&text);
    let out = common.out.clone().unwrap_or_else(|| {
        parsed
            .as_ref()
            .ok()
            .and_then(|c| c.outputs.dir.clone())
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out"))
    });
    let outcome = match parsed {
        Ok(cfg) => execute(
            &cfg,
            command,
            &RunOptions {
                out,
                quiet: common.quiet,
                seed: common.seed,
            },
        ),
        Err(e) => {
            eprintln!("error: {e}");
            config_rejected(&text, command, &out, &e.to_string())
        }
    };
    if !common.quiet {
        for (name, v) in &outcome.manifest.checks {
            println!("check {name}: {v}");
        }
        println!("status: {:?}", outcome.manifest.status);
    }
    ExitCode::from(outcome.exit_code as u8)
}
