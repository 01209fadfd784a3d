//! Solves the reference problem along characteristics with each corrector and
//! reports the mask and the value of phi + psi near the blow-up.
use blowup_lab::model::{InitialData, ProblemConfig};
use blowup_lab::solver::{solve_characteristic, Corrector};

fn main() {
    let data = InitialData::parse("5 + exp(-x^2)", "5").unwrap();
    for corrector in [
        Corrector::Trapezoid,
        Corrector::FixedPoint(4),
        Corrector::Adams4,
    ] {
        let cfg = ProblemConfig {
            corrector,
            ..ProblemConfig::reference()
        };
        let sol = solve_characteristic(&cfg, &data).unwrap();
        let lat = &sol.lattice;
        let first = sol.first_blow_row(0).map(|k| lat.t(k));
        let column = sol.column(0);
        let (k, phi, psi) = column.last().copied().unwrap();
        println!(
            "{corrector:?}: {} nodes, {} masked, column x=0 masked from t = {first:?}, last value {:.4e} at t = {:.4}",
            lat.len(),
            sol.masked_count(),
            phi + psi,
            lat.t(k)
        );
    }
}
