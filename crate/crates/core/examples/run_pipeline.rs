//! Runs the whole pipeline on the reference configuration into a temporary
//! directory and prints the manifest.
use blowup_lab::config::ExperimentConfig;
use blowup_lab::pipeline::{execute, Command, RunOptions};

fn main() {
    let mut cfg = ExperimentConfig::reference();
    cfg.outputs.emit_field = false;
    let out = std::env::temp_dir().join("blowup-lab-example");
    let outcome = execute(
        &cfg,
        Command::Run,
        &RunOptions {
            out: out.clone(),
            quiet: true,
            seed: 1,
        },
    );
    println!(
        "{}",
        std::fs::read_to_string(out.join("manifest.json")).unwrap()
    );
    println!("exit code {}", outcome.exit_code);
}
