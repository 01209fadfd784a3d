//! Extracts the blow-up curve for a bump in f and checks the Lipschitz bound
//! and the distance sandwich.
use blowup_lab::curve::{curve_extract, derivative_continuity, sandwich_probe};
use blowup_lab::model::{InitialData, ProblemConfig};
use blowup_lab::solver::solve_characteristic;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let cfg = ProblemConfig::reference();
    let data = InitialData::parse("5 + 2*exp(-(x/0.5)^2)", "5").unwrap();
    let sol = solve_characteristic(&cfg, &data).unwrap();
    let curve = curve_extract(&sol, &cfg).unwrap();
    for x in [-0.2, -0.1, 0.0, 0.1, 0.2] {
        println!(
            "T({x:+.1}) = {:.6}  T' = {:+.4}",
            curve.eval(x).unwrap(),
            curve.slope(x).unwrap()
        );
    }
    println!(
        "lipschitz_hat = {:.4} (bound {})",
        curve.lipschitz_hat,
        1.0 / (1.0 + cfg.eps0)
    );
    if let Ok(c) = derivative_continuity(&curve) {
        println!("largest jump of T' = {:.3e} at x = {}", c.modulus, c.at_x);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let probe = sandwich_probe(&curve, 100, 0.15, &mut rng).unwrap();
    println!(
        "sandwich: {} violations, ratio range [{:.4}, {:.4}]",
        probe.violations, probe.min_ratio, probe.max_ratio
    );
}
