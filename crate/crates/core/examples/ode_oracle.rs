//! Homogeneous-data ODE: closed-form T1 against RK4, and the effect of the
//! time-dependent damping mu/(1+t).
use blowup_lab::ode::{closed_form_t1, detect_blowup_time, rk4_trajectory, Damping, Rk4Options};

fn main() {
    let (p, mu, g1, g2) = (2.0, 1.0, 5.0, 5.0);
    let t1 = closed_form_t1(p, mu, g1 + g2).unwrap();
    println!("closed form T1 = {t1:.10}");
    for dt in [1e-3, 1e-4, 1e-5] {
        let run =
            rk4_trajectory(p, mu, g1, g2, &Rk4Options::new(dt, 1e8, Damping::Constant)).unwrap();
        println!(
            "rk4 dt = {dt:.0e}: T = {:.10} (error {:.2e})",
            run.detected_t,
            run.detected_t - t1
        );
    }
    let tdep = detect_blowup_time(
        p,
        mu,
        g1,
        g2,
        &Rk4Options::new(1e-4, 1e8, Damping::ScaleInvariant),
        1e-9,
    )
    .unwrap();
    println!(
        "with mu/(1+t): T = {:.10} after {} halvings",
        tdep.t_blowup, tdep.halvings
    );
}
