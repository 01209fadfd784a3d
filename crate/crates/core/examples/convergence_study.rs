//! Refinement study at h, h/2, h/4 through the pipeline helper.
use blowup_lab::config::ExperimentConfig;
use blowup_lab::pipeline::convergence_study;

fn main() {
    let study = convergence_study(&ExperimentConfig::reference(), 0.0).unwrap();
    for (h, t) in study.hs.iter().zip(&study.t_hat) {
        println!("h = {h:.2e}: T_hat(0) = {t:.8}");
    }
    println!(
        "observed order {:.3}, max |T_h - T_h/2| = {:.2e}",
        study.observed_order, study.max_curve_diff
    );
}
