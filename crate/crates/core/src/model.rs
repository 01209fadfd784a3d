//! Problem parameters, Riemann-invariant initial data and the standing
//! assumption checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::ode;
use crate::solver::Corrector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("no finite Glassey exponent for mu = {0} (requires mu > 0)")]
    NoGlasseyExponent(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("initial data failed to evaluate at x = {x}: {source}")]
    Data { x: f64, source: ExprError },
}

/// Glassey exponent `1 + 2/mu` for dimension one.
pub fn glassey_exponent(mu: f64) -> Result<f64, ModelError> {
    if mu > 0.0 {
        Ok(1.0 + 2.0 / mu)
    } else {
        Err(ModelError::NoGlasseyExponent(mu))
    }
}

/// Lower bound on `gamma1 + gamma2` required before solving:
/// `max(1, (mu p 2^p)^(1/(p-1)))`.
pub fn condgam_threshold(p: f64, mu: f64) -> f64 {
    let inner = mu * p * 2f64.powf(p);
    1f64.max(inner.powf(1.0 / (p - 1.0)))
}

/// Left-hand side of the A5 structural inequality, as a function of the
/// factor `1 + eps1 / (2 (1 + eps1))`.
fn a5_structural_with_factor(p: f64, mu: f64, factor: f64) -> f64 {
    2f64.powf(-p) * (2.0 * p - 1.0) * factor * (1.0 - 1.0 / (2.0 * p)) - 2f64.powf(1.0 - p) * p - mu
}

pub fn a5_structural_margin(p: f64, mu: f64, eps1: f64) -> f64 {
    a5_structural_with_factor(p, mu, 1.0 + eps1 / (2.0 * (1.0 + eps1)))
}

/// Whether some `eps1` can satisfy the A5 structural inequality. The factor
/// `1 + eps1/(2(1+eps1))` increases towards `3/2` as `eps1 -> infinity`.
pub fn a5_feasible(p: f64, mu: f64) -> bool {
    a5_structural_with_factor(p, mu, 1.5) > 0.0
}

/// Default threshold ladder: `{50, 100, 200, 400} * (gamma1 + gamma2)`.
pub fn default_thresholds(gamma_sum: f64) -> Vec<f64> {
    [50.0, 100.0, 200.0, 400.0]
        .iter()
        .map(|m| m * gamma_sum)
        .collect()
}

/// All scalar parameters of a run, including the numerical knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub p: f64,
    pub mu: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub r_star: f64,
    pub t_star: f64,
    pub eps0: f64,
    pub eps1: f64,
    /// Lattice spacing in both space and time.
    pub h: f64,
    /// Nodes whose value exceeds this cap are masked as blown up.
    pub v_max: f64,
    /// Increasing level ladder used by the curve extractor.
    pub thresholds: Vec<f64>,
    pub corrector: Corrector,
    /// Sampling points per lattice spacing for the A2/A4 maxima.
    pub sampling_density: usize,
}

impl ProblemConfig {
    /// Constant-data reference configuration: p = 2, mu = 1,
    /// gamma1 = gamma2 = 5, h = 1e-3.
    pub fn reference() -> Self {
        ProblemConfig {
            p: 2.0,
            mu: 1.0,
            gamma1: 5.0,
            gamma2: 5.0,
            r_star: 0.25,
            t_star: 0.25,
            eps0: 1.0,
            eps1: 1.0,
            h: 1e-3,
            v_max: 1e6,
            thresholds: default_thresholds(10.0),
            corrector: Corrector::Adams4,
            sampling_density: 10,
        }
    }

    pub fn gamma_sum(&self) -> f64 {
        self.gamma1 + self.gamma2
    }

    /// Blow-up rate exponent `1/(p-1)`.
    pub fn q(&self) -> f64 {
        1.0 / (self.p - 1.0)
    }

    /// Half-width `R* + T*` of the base of the cone of dependence.
    pub fn cone_half_width(&self) -> f64 {
        self.r_star + self.t_star
    }

    /// Structural invariants. The assumption-level conditions (condgam,
    /// A1-A5) are reported by [`validate_assumptions`] instead.
    pub fn check(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidParameter(m));
        let finite = [
            self.p,
            self.mu,
            self.gamma1,
            self.gamma2,
            self.r_star,
            self.t_star,
            self.eps0,
            self.eps1,
            self.h,
            self.v_max,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite".into());
        }
        if self.p <= 1.0 {
            return bad(format!("p = {} must exceed 1", self.p));
        }
        if self.mu < 0.0 {
            return bad(format!("mu = {} must be nonnegative", self.mu));
        }
        if self.mu > 0.0 {
            let pg = glassey_exponent(self.mu)?;
            if self.p >= pg {
                return bad(format!(
                    "p = {} outside the Glassey range p < {pg} for mu = {}",
                    self.p, self.mu
                ));
            }
        }
        if self.gamma1 <= 0.0 || self.gamma2 <= 0.0 {
            return bad("gamma1 and gamma2 must be positive".into());
        }
        if self.r_star <= 0.0 || self.t_star <= 0.0 {
            return bad("r_star and t_star must be positive".into());
        }
        if self.h <= 0.0 {
            return bad(format!("h = {} must be positive", self.h));
        }
        if self.eps0 <= 0.0 {
            return bad(format!("eps0 = {} must be positive", self.eps0));
        }
        if self.eps1 == -1.0 {
            return bad("eps1 = -1 is excluded".into());
        }
        if self.thresholds.len() < 2 {
            return bad("threshold ladder needs at least two levels".into());
        }
        if self.thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return bad("threshold ladder must be strictly increasing".into());
        }
        let top = self
            .thresholds
            .iter()
            .copied()
            .fold(self.gamma_sum(), f64::max);
        if self.v_max <= top {
            return bad(format!(
                "v_max = {} must exceed every threshold and gamma1 + gamma2",
                self.v_max
            ));
        }
        if self.sampling_density == 0 {
            return bad("sampling_density must be at least 1".into());
        }
        Ok(())
    }
}

/// Riemann invariants `f = u1 + u0'` and `g = u1 - u0'`.
pub fn riemann_invariants(u0_prime: &Expr, u1: &Expr) -> (Expr, Expr) {
    (
        Expr::add(u1.clone(), u0_prime.clone()),
        Expr::sub(u1.clone(), u0_prime.clone()),
    )
}

/// Initial values of the Riemann invariants together with their derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub f: Expr,
    pub g: Expr,
    pub f_prime: Expr,
    pub g_prime: Expr,
}

impl InitialData {
    pub fn from_riemann(f: Expr, g: Expr) -> Self {
        let f_prime = f.derivative();
        let g_prime = g.derivative();
        InitialData {
            f,
            g,
            f_prime,
            g_prime,
        }
    }

    pub fn from_wave(u0_prime: &Expr, u1: &Expr) -> Self {
        let (f, g) = riemann_invariants(u0_prime, u1);
        Self::from_riemann(f, g)
    }

    pub fn constant(gamma1: f64, gamma2: f64) -> Self {
        Self::from_riemann(Expr::Const(gamma1), Expr::Const(gamma2))
    }

    pub fn parse(f: &str, g: &str) -> Result<Self, ExprError> {
        Ok(Self::from_riemann(Expr::parse(f)?, Expr::parse(g)?))
    }

    pub fn f_at(&self, x: f64) -> Result<f64, ModelError> {
        self.f
            .eval(x)
            .map_err(|source| ModelError::Data { x, source })
    }

    pub fn g_at(&self, x: f64) -> Result<f64, ModelError> {
        self.g
            .eval(x)
            .map_err(|source| ModelError::Data { x, source })
    }

    /// `|f'(x)| + |g'(x)|`.
    pub fn slope_sum_at(&self, x: f64) -> Result<f64, ModelError> {
        let fp = self
            .f_prime
            .eval(x)
            .map_err(|source| ModelError::Data { x, source })?;
        let gp = self
            .g_prime
            .eval(x)
            .map_err(|source| ModelError::Data { x, source })?;
        Ok(fp.abs() + gp.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssumptionId {
    #[serde(rename = "condgam")]
    Condgam,
    A1,
    A2,
    A4,
    A5,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionRecord {
    pub id: AssumptionId,
    pub satisfied: bool,
    pub margin: f64,
    pub details: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub records: Vec<AssumptionRecord>,
    /// Whether any `eps1` can satisfy the A5 structural inequality.
    pub a5_feasible: bool,
    /// `(gamma1 + gamma2) - 2 mu^(1/(p-1))`, the ODE blow-up threshold margin.
    /// Reported next to condgam, which is the stronger requirement.
    pub ode_threshold_margin: f64,
    /// Smoothness of the data holds by construction of the expression grammar.
    pub a3: String,
}

impl AssumptionReport {
    pub fn get(&self, id: AssumptionId) -> &AssumptionRecord {
        self.records
            .iter()
            .find(|r| r.id == id)
            .expect("every assumption id is recorded")
    }

    pub fn satisfied(&self, id: AssumptionId) -> bool {
        self.get(id).satisfied
    }

    /// Failures that must stop a run before solving (condgam, A2).
    pub fn hard_failures(&self) -> Vec<AssumptionId> {
        [AssumptionId::Condgam, AssumptionId::A2]
            .into_iter()
            .filter(|id| !self.satisfied(*id))
            .collect()
    }

    /// Assumptions behind the rate and Lipschitz theorems (condgam, A1, A2, A4).
    pub fn rates_admissible(&self) -> bool {
        [
            AssumptionId::Condgam,
            AssumptionId::A1,
            AssumptionId::A2,
            AssumptionId::A4,
        ]
        .into_iter()
        .all(|id| self.satisfied(id))
    }

    /// Everything including A5, needed for the similarity-profile limit.
    pub fn profile_admissible(&self) -> bool {
        self.rates_admissible() && self.satisfied(AssumptionId::A5)
    }
}

/// Evaluate condgam and A1-A5 for a configuration and its data.
///
/// Maxima and minima over `B_{R*+T*}` are taken on a uniform sampling lattice
/// with `cfg.sampling_density` points per lattice spacing.
pub fn validate_assumptions(
    cfg: &ProblemConfig,
    data: &InitialData,
) -> Result<AssumptionReport, ModelError> {
    if cfg.eps1 == -1.0 {
        return Err(ModelError::InvalidParameter("eps1 = -1 is excluded".into()));
    }
    let (p, mu) = (cfg.p, cfg.mu);
    let gamma = cfg.gamma_sum();
    let mut records = Vec::with_capacity(5);

    let threshold = condgam_threshold(p, mu);
    let margin = gamma - threshold;
    records.push(AssumptionRecord {
        id: AssumptionId::Condgam,
        satisfied: margin > 0.0,
        margin,
        details: format!("gamma1 + gamma2 = {gamma} against threshold {threshold}"),
    });

    let ode_threshold = ode::blowup_threshold(p, mu);
    let a1 = match ode::closed_form_t1(p, mu, gamma) {
        Ok(t1) => AssumptionRecord {
            id: AssumptionId::A1,
            satisfied: t1 < cfg.t_star,
            margin: cfg.t_star - t1,
            details: format!("T1 = {t1}, T* = {}", cfg.t_star),
        },
        Err(_) => AssumptionRecord {
            id: AssumptionId::A1,
            satisfied: false,
            margin: gamma - ode_threshold,
            details: format!(
                "no ODE blow-up: gamma1 + gamma2 = {gamma} does not exceed {ode_threshold}"
            ),
        },
    };
    records.push(a1);

    let half = cfg.cone_half_width();
    let n = ((2.0 * half / cfg.h) * cfg.sampling_density as f64).ceil() as usize + 1;
    let mut a2_margin = f64::INFINITY;
    let mut a2_at = 0.0;
    let mut slope_max = 0.0f64;
    for i in 0..n {
        let x = -half + 2.0 * half * i as f64 / (n - 1) as f64;
        let m = (data.f_at(x)? - cfg.gamma1).min(data.g_at(x)? - cfg.gamma2);
        if m < a2_margin {
            a2_margin = m;
            a2_at = x;
        }
        slope_max = slope_max.max(data.slope_sum_at(x)?);
    }
    records.push(AssumptionRecord {
        id: AssumptionId::A2,
        satisfied: a2_margin >= 0.0,
        margin: a2_margin,
        details: format!("min(f - gamma1, g - gamma2) over {n} samples attained at x = {a2_at}"),
    });

    let drive = 2f64.powf(-p) * gamma.powf(p) - 0.5 * mu * gamma;
    let a4_margin = drive - (2.0 + cfg.eps0) * slope_max;
    records.push(AssumptionRecord {
        id: AssumptionId::A4,
        satisfied: cfg.eps0 > 0.0 && a4_margin >= 0.0,
        margin: if cfg.eps0 > 0.0 { a4_margin } else { cfg.eps0 },
        details: format!(
            "drive {drive} against (2 + eps0) * max(|f'| + |g'|) = {}",
            (2.0 + cfg.eps0) * slope_max
        ),
    });

    let feasible = a5_feasible(p, mu);
    let structural = a5_structural_margin(p, mu, cfg.eps1);
    let data_margin = drive - (2.0 + cfg.eps1) * slope_max;
    let a5 = if cfg.eps1 <= 0.0 {
        AssumptionRecord {
            id: AssumptionId::A5,
            satisfied: false,
            margin: cfg.eps1.min(structural.min(data_margin)),
            details: format!("eps1 = {} is not supported; A5 needs eps1 > 0", cfg.eps1),
        }
    } else {
        let margin = structural.min(data_margin);
        let mut details = format!("structural margin {structural}, data margin {data_margin}");
        if !feasible {
            details.push_str("; infeasible for all eps1");
        }
        AssumptionRecord {
            id: AssumptionId::A5,
            satisfied: structural > 0.0 && data_margin >= 0.0,
            margin,
            details,
        }
    };
    records.push(a5);

    Ok(AssumptionReport {
        records,
        a5_feasible: feasible,
        ode_threshold_margin: gamma - ode_threshold,
        a3: "satisfied (by grammar)".into(),
    })
}
