//! The spatially homogeneous system
//!
//! ```text
//! phi' = psi' = 2^{-p} (phi + psi)^p - (mu/2) (phi + psi),  phi(0) = gamma1, psi(0) = gamma2
//! ```
//!
//! Both right-hand sides coincide, so `phi - psi` is conserved and the sum
//! `y = phi + psi` obeys the Bernoulli equation `y' = 2^{1-p} y^p - mu y`,
//! which has a closed-form solution and an explicit blow-up time. A classical
//! RK4 integrator provides an independent route to both, and also covers the
//! scale-invariant damping `mu/(1+t)` seen by constant-data PDE runs.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("t = {t} is at or past the blow-up time T1 = {t1}")]
    BlowupPassed { t: f64, t1: f64 },
    #[error("no finite-time blow-up: gamma1 + gamma2 = {gamma} does not exceed {threshold}")]
    NoBlowup { gamma: f64, threshold: f64 },
    #[error("numerical failure at t = {t}: non-finite state below the cap")]
    NumericalFailure { t: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Damping law of the homogeneous problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Damping {
    /// `mu` (the reduced system with frozen damping).
    Constant,
    /// `mu / (1 + t)`, what constant initial data see in the PDE.
    ScaleInvariant,
}

impl Damping {
    fn coefficient(self, mu: f64, t: f64) -> f64 {
        match self {
            Damping::Constant => mu,
            Damping::ScaleInvariant => mu / (1.0 + t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OdeState {
    pub t: f64,
    pub y: f64,
    pub phi_hat: f64,
    pub psi_hat: f64,
}

impl OdeState {
    fn from_sum(t: f64, y: f64, gamma1: f64, gamma2: f64) -> Self {
        OdeState {
            t,
            y,
            phi_hat: 0.5 * (y + gamma1 - gamma2),
            psi_hat: 0.5 * (y - gamma1 + gamma2),
        }
    }
}

/// `2 mu^(1/(p-1))`: the sum `gamma1 + gamma2` must exceed this for the
/// reduced system to blow up.
pub fn blowup_threshold(p: f64, mu: f64) -> f64 {
    if mu <= 0.0 {
        0.0
    } else {
        2.0 * mu.powf(1.0 / (p - 1.0))
    }
}

/// Closed-form blow-up time of the Bernoulli equation.
pub fn closed_form_t1(p: f64, mu: f64, gamma_sum: f64) -> Result<f64, OdeError> {
    if p <= 1.0 || mu < 0.0 || gamma_sum <= 0.0 {
        return Err(OdeError::InvalidArgument(format!(
            "need p > 1, mu >= 0, gamma > 0 (got p = {p}, mu = {mu}, gamma = {gamma_sum})"
        )));
    }
    let c = 2f64.powf(1.0 - p);
    let v0 = gamma_sum.powf(1.0 - p);
    if mu == 0.0 {
        return Ok(v0 / ((p - 1.0) * c));
    }
    let threshold = blowup_threshold(p, mu);
    let gap = c / mu - v0;
    if gamma_sum <= threshold || gap <= 0.0 {
        return Err(OdeError::NoBlowup {
            gamma: gamma_sum,
            threshold,
        });
    }
    Ok((c / (mu * gap)).ln() / ((p - 1.0) * mu))
}

/// Closed-form state at time `t < T1`.
pub fn closed_form_state(
    p: f64,
    mu: f64,
    gamma1: f64,
    gamma2: f64,
    t: f64,
) -> Result<OdeState, OdeError> {
    let gamma = gamma1 + gamma2;
    let t1 = closed_form_t1(p, mu, gamma)?;
    if t >= t1 {
        return Err(OdeError::BlowupPassed { t, t1 });
    }
    let c = 2f64.powf(1.0 - p);
    let v0 = gamma.powf(1.0 - p);
    let v = if mu == 0.0 {
        v0 - (p - 1.0) * c * t
    } else {
        (v0 - c / mu) * ((p - 1.0) * mu * t).exp() + c / mu
    };
    Ok(OdeState::from_sum(
        t,
        v.powf(1.0 / (1.0 - p)),
        gamma1,
        gamma2,
    ))
}

/// Right-hand side of the summed equation.
pub fn sum_rhs(p: f64, mu: f64, damping: Damping, t: f64, y: f64) -> f64 {
    debug_assert!(!(y <= 0.0), "the sum must stay positive");
    2f64.powf(1.0 - p) * y.powf(p) - damping.coefficient(mu, t) * y
}

/// Time left before blow-up predicted by the leading-order undamped law
/// `y ~ [(p-1) 2^{1-p} (T - t)]^{-1/(p-1)}`.
pub fn undamped_time_to_blowup(p: f64, y: f64) -> f64 {
    2f64.powf(p - 1.0) * y.powf(1.0 - p) / (p - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rk4Options {
    pub dt: f64,
    pub cap: f64,
    pub damping: Damping,
    /// Safety limit on the number of steps.
    pub max_steps: usize,
}

impl Rk4Options {
    pub fn new(dt: f64, cap: f64, damping: Damping) -> Self {
        Rk4Options {
            dt,
            cap,
            damping,
            max_steps: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rk4Run {
    pub states: Vec<OdeState>,
    /// Last well-resolved state used for the blow-up extrapolation.
    pub anchor: OdeState,
    /// `anchor.t + 2^{p-1} y^{1-p} / (p-1)`.
    pub detected_t: f64,
    /// Whether the trajectory reached the cap.
    pub reached_cap: bool,
}

/// Step-size resolution used when choosing the extrapolation anchor: a state
/// is well resolved while `dt * 2^{1-p} y^{p-1}` stays below this value.
const RESOLVED_RATE: f64 = 0.05;

/// Classical RK4 on the summed equation. Components are reconstructed from
/// the sum, so `phi_hat - psi_hat` is exactly `gamma1 - gamma2` throughout.
///
/// Integration stops once `y` exceeds `opts.cap`. The blow-up time is
/// extrapolated from the last state that is still resolved by the step.
pub fn rk4_trajectory(
    p: f64,
    mu: f64,
    gamma1: f64,
    gamma2: f64,
    opts: &Rk4Options,
) -> Result<Rk4Run, OdeError> {
    let gamma = gamma1 + gamma2;
    if !(opts.dt > 0.0) || !(opts.cap > gamma) || p <= 1.0 || gamma <= 0.0 {
        return Err(OdeError::InvalidArgument(format!(
            "need dt > 0, cap > gamma1 + gamma2 > 0 and p > 1 (dt = {}, cap = {})",
            opts.dt, opts.cap
        )));
    }
    let f = |t: f64, y: f64| sum_rhs(p, mu, opts.damping, t, y);
    let h = opts.dt;
    let mut states = vec![OdeState::from_sum(0.0, gamma, gamma1, gamma2)];
    let mut anchor = states[0];
    let mut y = gamma;
    let mut reached_cap = false;
    let rate = 2f64.powf(1.0 - p);
    for step in 1..=opts.max_steps {
        let t = (step - 1) as f64 * h;
        let k1 = f(t, y);
        let k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
        let k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
        let k4 = f(t + h, y + h * k3);
        let next = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let t_next = step as f64 * h;
        let resolved = h * rate * y.powf(p - 1.0) < RESOLVED_RATE;
        if !next.is_finite() || next <= 0.0 {
            if resolved {
                return Err(OdeError::NumericalFailure { t: t_next });
            }
            reached_cap = true;
            break;
        }
        if next > opts.cap {
            reached_cap = true;
            break;
        }
        y = next;
        let state = OdeState::from_sum(t_next, y, gamma1, gamma2);
        if h * rate * y.powf(p - 1.0) < RESOLVED_RATE {
            anchor = state;
        }
        states.push(state);
    }
    let detected_t = anchor.t + undamped_time_to_blowup(p, anchor.y);
    Ok(Rk4Run {
        states,
        anchor,
        detected_t,
        reached_cap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupDetection {
    pub t_blowup: f64,
    pub dt: f64,
    pub halvings: usize,
}

/// Repeats [`rk4_trajectory`] with halved steps until the detected blow-up
/// time changes by less than `rel_tol` relative.
pub fn detect_blowup_time(
    p: f64,
    mu: f64,
    gamma1: f64,
    gamma2: f64,
    opts: &Rk4Options,
    rel_tol: f64,
) -> Result<BlowupDetection, OdeError> {
    let mut opts = *opts;
    let first = rk4_trajectory(p, mu, gamma1, gamma2, &opts)?;
    if !first.reached_cap {
        return Err(OdeError::NoBlowup {
            gamma: gamma1 + gamma2,
            threshold: blowup_threshold(p, mu),
        });
    }
    let mut prev = first.detected_t;
    for halvings in 1..=12 {
        opts.dt *= 0.5;
        let run = rk4_trajectory(p, mu, gamma1, gamma2, &opts)?;
        let t = run.detected_t;
        if (t - prev).abs() < rel_tol * t.abs() {
            return Ok(BlowupDetection {
                t_blowup: t,
                dt: opts.dt,
                halvings,
            });
        }
        prev = t;
    }
    Ok(BlowupDetection {
        t_blowup: prev,
        dt: opts.dt,
        halvings: 12,
    })
}
