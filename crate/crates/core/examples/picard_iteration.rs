//! Picard sweeps from the constant start: monotone growth and convergence
//! toward the direct solve.
use blowup_lab::analysis::{check_picard_monotone, sup_differences};
use blowup_lab::model::{InitialData, ProblemConfig};
use blowup_lab::solver::{picard_iterates, solve_characteristic, Corrector};

fn main() {
    let cfg = ProblemConfig {
        corrector: Corrector::FixedPoint(30),
        ..ProblemConfig::reference()
    };
    let data = InitialData::constant(5.0, 5.0);
    let iterates = picard_iterates(&cfg, &data, 10).unwrap();
    let direct = solve_characteristic(&cfg, &data).unwrap();
    println!(
        "monotone: {:?}",
        check_picard_monotone(&iterates).unwrap().is_none()
    );
    let diffs = sup_differences(&iterates, &direct, 0.11).unwrap();
    for (n, d) in diffs.iter().enumerate() {
        let ratio = if n > 0 { d / diffs[n - 1] } else { f64::NAN };
        println!("sweep {n:2}: sup diff {d:.3e}  ratio {ratio:.3}");
    }
}
