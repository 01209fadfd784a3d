//! Numerical checks of the rate bounds, gradient domination and Picard
//! monotonicity against solver output.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::curve::{level_time_column, BlowupCurve, CurveError};
use crate::solver::FieldSolution;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("power-law fit needs at least 8 samples, got {0}")]
    InsufficientData(usize),
    #[error("empty fit window ({t_lo}, {t_hi})")]
    EmptyWindow { t_lo: f64, t_hi: f64 },
    #[error("iterates: {0}")]
    Shape(String),
    #[error(transparent)]
    Curve(#[from] CurveError),
}

/// `(C1, C2)` from the proof of the rate theorem:
/// `C2 = 2^{p-1} (p-1)^{-1/(p-1)}`, `C1 = 2 ((p-1)(1+eps0)/eps0)^{-1/(p-1)}`.
pub fn rate_constants(p: f64, eps0: f64) -> (f64, f64) {
    let q = 1.0 / (p - 1.0);
    let c2 = 2f64.powf(p - 1.0) * (p - 1.0).powf(-q);
    let c1 = 2.0 * ((p - 1.0) * (1.0 + eps0) / eps0).powf(-q);
    (c1, c2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub q_hat: f64,
    pub c_hat: f64,
    pub r2: f64,
    pub samples: usize,
}

/// OLS of `log value` against `-log(t_blow - t)`.
pub fn fit_power_law(samples: &[(f64, f64)], t_blow: f64) -> Result<PowerLawFit, AnalysisError> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(t, v)| *t < t_blow && *v > 0.0)
        .map(|&(t, v)| (-(t_blow - t).ln(), v.ln()))
        .collect();
    if pts.len() < 8 {
        return Err(AnalysisError::InsufficientData(pts.len()));
    }
    let n = pts.len() as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in &pts {
        sxy += (x - xm) * (y - ym);
        sxx += (x - xm) * (x - xm);
        syy += (y - ym) * (y - ym);
    }
    let q_hat = sxy / sxx;
    let intercept = ym - q_hat * xm;
    let r2 = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(PowerLawFit {
        q_hat,
        c_hat: intercept.exp(),
        r2,
        samples: pts.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitWindow {
    /// `(T - (T - t_first)/2, T - 5h)`, where `t_first` is the time at
    /// which `phi + psi` first doubles its initial value at `x`.
    #[default]
    Default,
    Absolute {
        t_lo: f64,
        t_hi: f64,
    },
}

impl FitWindow {
    pub fn resolve(
        &self,
        sol: &FieldSolution,
        c: isize,
        t_hat: f64,
    ) -> Result<(f64, f64), AnalysisError> {
        match *self {
            FitWindow::Absolute { t_lo, t_hi } => Ok((t_lo, t_hi)),
            FitWindow::Default => {
                let y0 = sol.sum_at(0, c).ok_or(AnalysisError::EmptyWindow {
                    t_lo: f64::NAN,
                    t_hi: f64::NAN,
                })?;
                let t_first = level_time_column(sol, c, 2.0 * y0)?;
                Ok((t_hat - 0.5 * (t_hat - t_first), t_hat - 5.0 * sol.h()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Inequality {
    #[serde(rename = "aa")]
    Aa,
    #[serde(rename = "bb")]
    Bb,
    #[serde(rename = "cc")]
    Cc,
    #[serde(rename = "dd")]
    Dd,
    #[serde(rename = "ee")]
    Ee,
}

impl Inequality {
    pub const ALL: [Inequality; 5] = [
        Inequality::Aa,
        Inequality::Bb,
        Inequality::Cc,
        Inequality::Dd,
        Inequality::Ee,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Inequality::Aa => "aa",
            Inequality::Bb => "bb",
            Inequality::Cc => "cc",
            Inequality::Dd => "dd",
            Inequality::Ee => "ee",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub x: f64,
    pub t: f64,
    pub quantity: Inequality,
    pub side: Side,
    pub bound: f64,
    pub value: f64,
    /// Rows between this node and the first masked row in its column.
    pub rows_to_mask: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub x: f64,
    pub q_hat: f64,
    pub c_hat: f64,
    pub q_expected: f64,
    pub c1_bound: f64,
    pub c2_bound: f64,
    pub window: (f64, f64),
    pub r2: f64,
    pub samples: usize,
    /// Violations of the two-sided `(T - t)^{-q}` bound over the window.
    pub violations: Vec<Violation>,
}

fn rows_to_mask(sol: &FieldSolution, c: isize, k: usize) -> Option<usize> {
    sol.first_blow_row(c).map(|b| b.saturating_sub(k))
}

/// Fits `phi + psi ~ C (T(x) - t)^{-q}` over the window at lattice abscissa
/// `x`, with `T(x)` taken from the curve.
pub fn fit_rate_exponent(
    sol: &FieldSolution,
    curve: &BlowupCurve,
    x: f64,
    window: FitWindow,
    eps0: f64,
) -> Result<RateReport, AnalysisError> {
    let c = sol.lattice.column_of(x).ok_or(CurveError::NotAColumn(x))?;
    let t_hat = curve.eval(x)?;
    let (t_lo, t_hi) = window.resolve(sol, c, t_hat)?;
    if !(t_lo < t_hi) {
        return Err(AnalysisError::EmptyWindow { t_lo, t_hi });
    }
    let p = sol.params.p;
    let (c1, c2) = rate_constants(p, eps0);
    let q = 1.0 / (p - 1.0);
    let mut samples = Vec::new();
    let mut violations = Vec::new();
    for (k, a, b) in sol.column(c) {
        let t = sol.lattice.t(k);
        if t < t_lo || t > t_hi || t >= t_hat {
            continue;
        }
        let y = a + b;
        samples.push((t, y));
        let s = (t_hat - t).powf(-q);
        for (side, bound, bad) in [
            (Side::Lower, c1 * s, y < c1 * s),
            (Side::Upper, c2 * s, y > c2 * s),
        ] {
            if bad {
                violations.push(Violation {
                    x,
                    t,
                    quantity: Inequality::Ee,
                    side,
                    bound,
                    value: y,
                    rows_to_mask: rows_to_mask(sol, c, k),
                });
            }
        }
    }
    let fit = fit_power_law(&samples, t_hat)?;
    Ok(RateReport {
        x,
        q_hat: fit.q_hat,
        c_hat: fit.c_hat,
        q_expected: q,
        c1_bound: c1,
        c2_bound: c2,
        window: (t_lo, t_hi),
        r2: fit.r2,
        samples: fit.samples,
        violations,
    })
}

/// Lower/upper constants used for one inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InequalityConstants {
    pub quantity: Inequality,
    pub lower: f64,
    pub upper: f64,
    /// `true` for the stated `(ee)` constants, `false` for envelopes.
    pub hard: bool,
}

/// Per-inequality constants. `(ee)` uses `C1, C2` as stated. `(aa)`/`(cc)`
/// use the intermediate estimate
/// `2^{-p-2} (phi+psi)^p <= d_t phi <= (1+eps0)/eps0 2^{-p} (phi+psi)^p`
/// from the proof, and `(bb)`/`(dd)` compose it with `(ee)`.
pub fn inequality_constants(p: f64, eps0: f64) -> [InequalityConstants; 5] {
    let (c1, c2) = rate_constants(p, eps0);
    let lo = 2f64.powf(-p - 2.0);
    let hi = (1.0 + eps0) / eps0 * 2f64.powf(-p);
    let mk = |quantity, lower, upper, hard| InequalityConstants {
        quantity,
        lower,
        upper,
        hard,
    };
    [
        mk(Inequality::Aa, lo, hi, false),
        mk(Inequality::Bb, lo * c1.powf(p), hi * c2.powf(p), false),
        mk(Inequality::Cc, lo, hi, false),
        mk(Inequality::Dd, lo * c1.powf(p), hi * c2.powf(p), false),
        mk(Inequality::Ee, c1, c2, true),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InequalityTally {
    pub quantity: Inequality,
    pub checked: usize,
    pub lower_violations: usize,
    pub upper_violations: usize,
    /// Largest `value/upper` and smallest `value/lower` seen.
    pub max_upper_ratio: f64,
    pub min_lower_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub constants: [InequalityConstants; 5],
    pub tallies: Vec<InequalityTally>,
    pub slack: f64,
    /// No `(ee)` violations.
    pub hard_pass: bool,
    /// No `(aa)`-`(dd)` violations.
    pub envelope_pass: bool,
    pub violations: Vec<Violation>,
}

impl BoundsReport {
    pub fn tally(&self, q: Inequality) -> &InequalityTally {
        self.tallies
            .iter()
            .find(|t| t.quantity == q)
            .expect("all inequalities tallied")
    }
}

/// Evaluates `(aa)`-`(ee)` at interior unmasked nodes inside the window of
/// every curve abscissa. Time derivatives are centered differences, and a
/// violation is recorded beyond the slack factor `1 + 10h`.
pub fn check_two_sided(
    sol: &FieldSolution,
    curve: &BlowupCurve,
    eps0: f64,
    window: FitWindow,
) -> BoundsReport {
    let p = sol.params.p;
    let q = 1.0 / (p - 1.0);
    let h = sol.h();
    let slack = 1.0 + 10.0 * h;
    let constants = inequality_constants(p, eps0);

    type Hit = (Inequality, f64, f64, f64);
    let per_x: Vec<(Vec<Hit>, Vec<Violation>)> = curve
        .xs
        .par_iter()
        .zip(curve.t_hat.par_iter())
        .map(|(&x, &t_hat)| {
            let mut hits = Vec::new();
            let mut viol = Vec::new();
            let Some(c) = sol.lattice.column_of(x) else {
                return (hits, viol);
            };
            let Ok((t_lo, t_hi)) = window.resolve(sol, c, t_hat) else {
                return (hits, viol);
            };
            let top = sol.lattice.column_top(c).unwrap_or(0);
            for k in 1..top {
                let t = sol.lattice.t(k);
                if t < t_lo || t > t_hi || t >= t_hat {
                    continue;
                }
                let (Some(pu), Some(pd), Some(su), Some(sd), Some(y)) = (
                    sol.phi_at(k + 1, c),
                    sol.phi_at(k - 1, c),
                    sol.psi_at(k + 1, c),
                    sol.psi_at(k - 1, c),
                    sol.sum_at(k, c),
                ) else {
                    continue;
                };
                if sol.sum_at(k, c - 1).is_none() || sol.sum_at(k, c + 1).is_none() {
                    continue;
                }
                let dphi = (pu - pd) / (2.0 * h);
                let dpsi = (su - sd) / (2.0 * h);
                let gap = t_hat - t;
                let yp = y.powf(p);
                let s1 = gap.powf(-q - 1.0);
                let sq = gap.powf(-q);
                let cases = [
                    (Inequality::Aa, dphi, yp),
                    (Inequality::Bb, dphi, s1),
                    (Inequality::Cc, dpsi, yp),
                    (Inequality::Dd, dpsi, s1),
                    (Inequality::Ee, y, sq),
                ];
                for (i, (quantity, value, scale)) in cases.into_iter().enumerate() {
                    let ks = &constants[i];
                    let (lo, hi) = (ks.lower * scale, ks.upper * scale);
                    hits.push((quantity, value, lo, hi));
                    let side = if value < lo / slack {
                        Some((Side::Lower, lo))
                    } else if value > hi * slack {
                        Some((Side::Upper, hi))
                    } else {
                        None
                    };
                    if let Some((side, bound)) = side {
                        viol.push(Violation {
                            x,
                            t,
                            quantity,
                            side,
                            bound,
                            value,
                            rows_to_mask: rows_to_mask(sol, c, k),
                        });
                    }
                }
            }
            (hits, viol)
        })
        .collect();

    let mut tallies: Vec<InequalityTally> = Inequality::ALL
        .iter()
        .map(|&quantity| InequalityTally {
            quantity,
            checked: 0,
            lower_violations: 0,
            upper_violations: 0,
            max_upper_ratio: 0.0,
            min_lower_ratio: f64::INFINITY,
        })
        .collect();
    let mut violations = Vec::new();
    for (hits, viol) in per_x {
        for (quantity, value, lo, hi) in hits {
            let t = &mut tallies[quantity as usize];
            t.checked += 1;
            t.max_upper_ratio = t.max_upper_ratio.max(value / hi);
            t.min_lower_ratio = t.min_lower_ratio.min(value / lo);
        }
        for v in viol {
            let t = &mut tallies[v.quantity as usize];
            match v.side {
                Side::Lower => t.lower_violations += 1,
                Side::Upper => t.upper_violations += 1,
            }
            violations.push(v);
        }
    }
    let bad = |t: &InequalityTally| t.lower_violations + t.upper_violations > 0;
    let hard_pass = !bad(&tallies[Inequality::Ee as usize]);
    let envelope_pass = tallies[..4].iter().all(|t| !bad(t));
    BoundsReport {
        constants,
        tallies,
        slack,
        hard_pass,
        envelope_pass,
        violations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominationMargin {
    /// `min (d_t v - (1+eps0)|d_x v|)` over interior nodes.
    pub margin: f64,
    pub x: f64,
    pub t: f64,
    /// Within two rows of the mask; informational only.
    pub near_singular: bool,
    /// Minimum over nodes at least three rows below the mask.
    pub margin_away_from_mask: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominationReport {
    pub phi: DominationMargin,
    pub psi: DominationMargin,
    pub nodes_checked: usize,
    /// `C` with `margin >= -C h`; zero when both margins are nonnegative.
    pub discretization_constant: f64,
}

/// Centered-difference check of `d_t v >= (1+eps0) |d_x v|` for `v = phi`
/// and `v = psi` at interior unmasked nodes.
pub fn check_gradient_domination(sol: &FieldSolution, eps0: f64) -> DominationReport {
    let lat = &sol.lattice;
    let h = sol.h();
    let rows = lat.num_rows();
    // (margin, k, c, near) per field, reduced per row in column order
    type Best = Option<(f64, usize, isize, bool)>;
    let keep = |best: &mut Best, cand: (f64, usize, isize, bool)| {
        if best.is_none_or(|b| cand.0 < b.0) {
            *best = Some(cand);
        }
    };
    let per_row: Vec<(Best, Best, f64, f64, usize)> = (1..rows.saturating_sub(1))
        .into_par_iter()
        .map(|k| {
            let (mut bp, mut bs) = (None, None);
            let (mut fp, mut fs) = (f64::INFINITY, f64::INFINITY);
            let mut n = 0;
            for c in lat.columns(k + 1) {
                let vals = (
                    sol.phi_at(k + 1, c),
                    sol.phi_at(k - 1, c),
                    sol.phi_at(k, c + 1),
                    sol.phi_at(k, c - 1),
                    sol.psi_at(k + 1, c),
                    sol.psi_at(k - 1, c),
                    sol.psi_at(k, c + 1),
                    sol.psi_at(k, c - 1),
                );
                let (
                    Some(pu),
                    Some(pd),
                    Some(pr),
                    Some(pl),
                    Some(su),
                    Some(sd),
                    Some(sr),
                    Some(sl),
                ) = vals
                else {
                    continue;
                };
                n += 1;
                let mp = (pu - pd) / (2.0 * h) - (1.0 + eps0) * ((pr - pl) / (2.0 * h)).abs();
                let ms = (su - sd) / (2.0 * h) - (1.0 + eps0) * ((sr - sl) / (2.0 * h)).abs();
                let near = sol.first_blow_row(c).is_some_and(|b| b <= k + 2);
                keep(&mut bp, (mp, k, c, near));
                keep(&mut bs, (ms, k, c, near));
                if !near {
                    fp = fp.min(mp);
                    fs = fs.min(ms);
                }
            }
            (bp, bs, fp, fs, n)
        })
        .collect();
    let (mut bp, mut bs): (Best, Best) = (None, None);
    let (mut fp, mut fs, mut n) = (f64::INFINITY, f64::INFINITY, 0);
    for (p, s, a, b, m) in per_row {
        if let Some(p) = p {
            keep(&mut bp, p);
        }
        if let Some(s) = s {
            keep(&mut bs, s);
        }
        fp = fp.min(a);
        fs = fs.min(b);
        n += m;
    }
    let mk = |b: Best, away: f64| match b {
        Some((margin, k, c, near)) => DominationMargin {
            margin,
            x: lat.x(c),
            t: lat.t(k),
            near_singular: near,
            margin_away_from_mask: away,
        },
        None => DominationMargin {
            margin: f64::NAN,
            x: f64::NAN,
            t: f64::NAN,
            near_singular: false,
            margin_away_from_mask: f64::NAN,
        },
    };
    let phi = mk(bp, fp);
    let psi = mk(bs, fs);
    let worst = phi.margin.min(psi.margin);
    DominationReport {
        phi,
        psi,
        nodes_checked: n,
        discretization_constant: if worst < 0.0 { -worst / h } else { 0.0 },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotoneViolation {
    /// Index of the earlier iterate.
    pub n: usize,
    pub x: f64,
    pub t: f64,
    pub field: &'static str,
    pub earlier: f64,
    pub later: f64,
}

/// Checks `phi_{n+1} >= phi_n - 1e-12` (and the same for `psi`) nodewise.
/// A node masked in iterate `n` but not in `n+1` also counts as a
/// violation. Returns the first violation in `(n, k, c)` order.
pub fn check_picard_monotone(
    iterates: &[FieldSolution],
) -> Result<Option<MonotoneViolation>, AnalysisError> {
    if iterates.len() < 2 {
        return Err(AnalysisError::Shape(format!(
            "need at least 2 iterates, got {}",
            iterates.len()
        )));
    }
    let lat = &iterates[0].lattice;
    if iterates.iter().any(|it| it.lattice != *lat) {
        return Err(AnalysisError::Shape(
            "iterates live on different lattices".into(),
        ));
    }
    for (n, pair) in iterates.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        for k in 0..lat.num_rows() {
            for c in lat.columns(k) {
                let i = lat.index(k, c).unwrap();
                let mk = |field, earlier, later| MonotoneViolation {
                    n,
                    x: lat.x(c),
                    t: lat.t(k),
                    field,
                    earlier,
                    later,
                };
                match (a.blown[i], b.blown[i]) {
                    (true, false) => return Ok(Some(mk("mask", f64::INFINITY, b.phi[i]))),
                    (false, false) => {
                        if b.phi[i] < a.phi[i] - 1e-12 {
                            return Ok(Some(mk("phi", a.phi[i], b.phi[i])));
                        }
                        if b.psi[i] < a.psi[i] - 1e-12 {
                            return Ok(Some(mk("psi", a.psi[i], b.psi[i])));
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(None)
}

/// `sup |iterate - reference|` over nodes with `t <= t_max` that are
/// unmasked in both, for each iterate.
pub fn sup_differences(
    iterates: &[FieldSolution],
    reference: &FieldSolution,
    t_max: f64,
) -> Result<Vec<f64>, AnalysisError> {
    let lat = &reference.lattice;
    if iterates.iter().any(|it| it.lattice != *lat) {
        return Err(AnalysisError::Shape(
            "iterates and reference differ in lattice".into(),
        ));
    }
    Ok(iterates
        .iter()
        .map(|it| {
            let mut sup: f64 = 0.0;
            for k in 0..lat.num_rows() {
                if lat.t(k) > t_max {
                    break;
                }
                for i in lat.row_range(k) {
                    if !it.blown[i] && !reference.blown[i] {
                        sup = sup
                            .max((it.phi[i] - reference.phi[i]).abs())
                            .max((it.psi[i] - reference.psi[i]).abs());
                    }
                }
            }
            sup
        })
        .collect())
}
