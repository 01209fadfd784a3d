//! Checks the standing assumptions for a few configurations, including the
//! A5 feasibility corners.
use blowup_lab::model::{
    a5_feasible, a5_structural_margin, condgam_threshold, validate_assumptions, InitialData,
    ProblemConfig,
};

fn main() {
    let cfg = ProblemConfig::reference();
    let data = InitialData::constant(5.0, 5.0);
    let report = validate_assumptions(&cfg, &data).expect("valid parameters");
    for r in &report.records {
        println!(
            "{:?}: satisfied={} margin={:+.4e}",
            r.id, r.satisfied, r.margin
        );
    }
    println!("hard failures: {:?}", report.hard_failures());
    println!(
        "rates admissible: {}, profile admissible: {}",
        report.rates_admissible(),
        report.profile_admissible()
    );

    println!(
        "condgam threshold at (p, mu) = (2, 1): {}",
        condgam_threshold(2.0, 1.0)
    );
    let weak = ProblemConfig {
        gamma1: 3.0,
        gamma2: 3.0,
        ..ProblemConfig::reference()
    };
    let r = validate_assumptions(&weak, &InitialData::constant(3.0, 3.0)).unwrap();
    println!("gamma sum 6: hard failures {:?}", r.hard_failures());

    println!("A5 feasible at (2, 1): {}", a5_feasible(2.0, 1.0));
    println!(
        "A5 at (3, 0.01, eps1 = 50): feasible {}, margin {:+.4}",
        a5_feasible(3.0, 0.01),
        a5_structural_margin(3.0, 0.01, 50.0)
    );
}
