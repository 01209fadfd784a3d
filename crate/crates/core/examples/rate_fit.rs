//! Fits the blow-up rate exponent at x = 0 for p = 2 and p = 3 and tallies
//! the two-sided bounds.
use blowup_lab::analysis::{check_two_sided, fit_rate_exponent, FitWindow, Inequality};
use blowup_lab::curve::curve_extract;
use blowup_lab::model::{InitialData, ProblemConfig};
use blowup_lab::solver::solve_characteristic;

fn main() {
    let p3 = ProblemConfig {
        p: 3.0,
        mu: 0.5,
        gamma1: 2.0,
        gamma2: 2.0,
        r_star: 0.15,
        t_star: 0.15,
        v_max: 1e5,
        thresholds: vec![20.0, 40.0, 80.0, 160.0],
        ..ProblemConfig::reference()
    };
    for cfg in [ProblemConfig::reference(), p3] {
        let data = InitialData::constant(cfg.gamma1, cfg.gamma2);
        let sol = solve_characteristic(&cfg, &data).unwrap();
        let curve = curve_extract(&sol, &cfg).unwrap();
        let fit = fit_rate_exponent(&sol, &curve, 0.0, FitWindow::Default, cfg.eps0).unwrap();
        println!(
            "p = {}: q_hat = {:.4} (expected {:.4}), C_hat = {:.4}, {} samples, r2 = {:.6}",
            cfg.p, fit.q_hat, fit.q_expected, fit.c_hat, fit.samples, fit.r2
        );
        let bounds = check_two_sided(&sol, &curve, cfg.eps0, FitWindow::Default);
        let ee = bounds.tally(Inequality::Ee);
        println!(
            "  envelope pass {}, (ee) lower/upper violations {}/{}",
            bounds.envelope_pass, ee.lower_violations, ee.upper_violations
        );
    }
}
