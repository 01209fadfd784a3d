//! Exact similarity profile and the rescaled-solution convergence table.
use blowup_lab::curve::curve_extract;
use blowup_lab::model::{InitialData, ProblemConfig};
use blowup_lab::selfsimilar::{profile_convergence, Interpolation, SimilarityProfile};
use blowup_lab::solver::solve_characteristic;

fn main() {
    let prof = SimilarityProfile::new(2.0, 0.2).unwrap();
    let pts: Vec<(f64, f64)> = (0..20).map(|i| (-1.0 + 0.1 * i as f64, -0.5)).collect();
    println!(
        "profile residual: {:.2e}",
        prof.residual(&pts).unwrap().max_rel
    );

    let cfg = ProblemConfig {
        h: 5e-4,
        ..ProblemConfig::reference()
    };
    let sol = solve_characteristic(&cfg, &InitialData::constant(5.0, 5.0)).unwrap();
    let curve = curve_extract(&sol, &cfg).unwrap();
    let conv = profile_convergence(
        &sol,
        &curve,
        0.0,
        &[0.1, 0.05, 0.025],
        Interpolation::PowerBilinear,
    )
    .unwrap();
    for r in &conv.rows {
        println!(
            "lambda {:<6} sup error {:.4}  damping part {:.4}",
            r.lambda, r.sup_error, r.damping_contribution
        );
    }
    println!("nonincreasing: {}", conv.nonincreasing);
}
