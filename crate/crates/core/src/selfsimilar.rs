//! Exact similarity profiles of the undamped limiting system
//!
//! ```text
//! D_- V_phi = 2^{-p} (V_phi + V_psi)^p,   D_+ V_psi = 2^{-p} (V_phi + V_psi)^p
//! ```
//!
//! with straight blow-up line `s = alpha y`, and the blow-up-limit rescaling
//! `phi_l(y, s) = l^q phi(x0 + l y, T(x0) + l s)`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::curve::{BlowupCurve, CurveError};
use crate::solver::FieldSolution;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("slope alpha = {0} outside (-1, 1)")]
    Alpha(f64),
    #[error("exponent p = {0} must exceed 1")]
    Exponent(f64),
    #[error("(y, s) = ({y}, {s}) is on or above the blow-up line s = alpha y")]
    OutsideDomain { y: f64, s: f64 },
    #[error("empty sample set")]
    NoSamples,
    #[error("lambda = {0} must be positive")]
    Lambda(f64),
    #[error("lambda = {lambda} below lattice resolution 10h = {min}")]
    BelowResolution { lambda: f64, min: f64 },
    #[error("probe set leaves the unmasked cone at lambda = {lambda}: {covered}/{requested} points covered")]
    Coverage {
        lambda: f64,
        covered: usize,
        requested: usize,
    },
    #[error(transparent)]
    Curve(#[from] CurveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimilarityProfile {
    pub p: f64,
    pub alpha: f64,
    pub q: f64,
    pub a: f64,
    pub c_phi: f64,
    pub c_psi: f64,
}

impl SimilarityProfile {
    /// `A^{p-1} = 2^{p-1} q (1 - alpha^2)`, `C_phi = (1-alpha)/2 A`,
    /// `C_psi = (1+alpha)/2 A`.
    pub fn new(p: f64, alpha: f64) -> Result<Self, ProfileError> {
        if !(p > 1.0) {
            return Err(ProfileError::Exponent(p));
        }
        if !(alpha.abs() < 1.0) {
            return Err(ProfileError::Alpha(alpha));
        }
        let q = 1.0 / (p - 1.0);
        let a = (2f64.powf(p - 1.0) * q * (1.0 - alpha * alpha)).powf(q);
        let c_phi = 0.5 * (1.0 - alpha) * a;
        Ok(SimilarityProfile {
            p,
            alpha,
            q,
            a,
            c_phi,
            c_psi: a - c_phi,
        })
    }

    /// Same profile with the amplitudes replaced (for fault injection).
    pub fn with_constants(mut self, c_phi: f64, c_psi: f64) -> Self {
        self.c_phi = c_phi;
        self.c_psi = c_psi;
        self
    }

    fn rho(&self, y: f64, s: f64) -> Result<f64, ProfileError> {
        let rho = self.alpha * y - s;
        if rho > 0.0 {
            Ok(rho)
        } else {
            Err(ProfileError::OutsideDomain { y, s })
        }
    }

    /// `(C_phi rho^{-q}, C_psi rho^{-q})` with `rho = alpha y - s`.
    pub fn eval(&self, y: f64, s: f64) -> Result<(f64, f64), ProfileError> {
        let r = self.rho(y, s)?.powf(-self.q);
        Ok((self.c_phi * r, self.c_psi * r))
    }

    /// Maximum residual of the limiting system over `samples`, from the
    /// closed-form partial derivatives.
    pub fn residual(&self, samples: &[(f64, f64)]) -> Result<ResidualReport, ProfileError> {
        if samples.is_empty() {
            return Err(ProfileError::NoSamples);
        }
        let mut out = ResidualReport {
            max_abs: 0.0,
            max_rel: 0.0,
        };
        for &(y, s) in samples {
            let rho = self.rho(y, s)?;
            let d = self.q * rho.powf(-self.q - 1.0);
            // d_s rho^{-q} = q rho^{-q-1}, d_y rho^{-q} = -alpha q rho^{-q-1}
            let dm_phi = self.c_phi * d * (1.0 + self.alpha);
            let dp_psi = self.c_psi * d * (1.0 - self.alpha);
            let (vp, vs) = self.eval(y, s)?;
            let rhs = 2f64.powf(-self.p) * (vp + vs).powf(self.p);
            let abs = (dm_phi - rhs).abs().max((dp_psi - rhs).abs());
            out.max_abs = out.max_abs.max(abs);
            out.max_rel = out.max_rel.max(abs / rhs);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualReport {
    pub max_abs: f64,
    /// Residual relative to the local right-hand side.
    pub max_rel: f64,
}

/// `(T(x0 + l y) - T(x0)) / l`.
pub fn scaled_blowup_time(
    curve: &BlowupCurve,
    x0: f64,
    lambda: f64,
    y: f64,
) -> Result<f64, ProfileError> {
    if !(lambda > 0.0) {
        return Err(ProfileError::Lambda(lambda));
    }
    Ok((curve.eval(x0 + lambda * y)? - curve.eval(x0)?) / lambda)
}

/// How field values are interpolated between lattice nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Bilinear in `(phi, psi)` themselves.
    Bilinear,
    /// Bilinear in `phi^{1-p}`, `psi^{1-p}`, which are close to linear in
    /// `t` near blow-up; exact on the similarity profiles.
    #[default]
    PowerBilinear,
}

/// Bilinear interpolation of `(phi, psi)` at `(x, t)`; `None` when a node
/// with nonzero weight is masked or missing.
pub fn sample_bilinear(sol: &FieldSolution, x: f64, t: f64) -> Option<(f64, f64)> {
    sample(sol, x, t, Interpolation::Bilinear)
}

/// Interpolated `(phi, psi)` at `(x, t)` with the chosen scheme.
pub fn sample(sol: &FieldSolution, x: f64, t: f64, mode: Interpolation) -> Option<(f64, f64)> {
    let h = sol.h();
    let e = match mode {
        Interpolation::Bilinear => 1.0,
        Interpolation::PowerBilinear => 1.0 - sol.params.p,
    };
    let fwd = |v: f64| if e == 1.0 { v } else { v.powf(e) };
    let snap = |u: f64| {
        let r = u.round();
        if (u - r).abs() < 1e-9 {
            r
        } else {
            u
        }
    };
    let (u, v) = (snap(x / h), snap(t / h));
    if v < 0.0 {
        return None;
    }
    let (c0, k0) = (u.floor(), v.floor());
    let (wx, wt) = (u - c0, v - k0);
    let (c0, k0) = (c0 as isize, k0 as usize);
    let mut acc = (0.0, 0.0);
    let mut single = None;
    for (dk, fk) in [(0, 1.0 - wt), (1, wt)] {
        for (dc, fc) in [(0, 1.0 - wx), (1, wx)] {
            let w = fk * fc;
            if w == 0.0 {
                continue;
            }
            let i = sol.lattice.index(k0 + dk, c0 + dc)?;
            if sol.blown[i] || (e != 1.0 && !(sol.phi[i] > 0.0 && sol.psi[i] > 0.0)) {
                return None;
            }
            if w == 1.0 {
                single = Some((sol.phi[i], sol.psi[i]));
            }
            acc.0 += w * fwd(sol.phi[i]);
            acc.1 += w * fwd(sol.psi[i]);
        }
    }
    if single.is_some() {
        return single;
    }
    if e == 1.0 {
        Some(acc)
    } else {
        Some((acc.0.powf(1.0 / e), acc.1.powf(1.0 / e)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RescaledSample {
    pub y: f64,
    pub s: f64,
    pub phi: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RescaledView {
    pub x0: f64,
    pub lambda: f64,
    pub q: f64,
    pub t0: f64,
    /// Rescaled field at the covered probe points.
    pub samples: Vec<RescaledSample>,
    pub requested: usize,
    /// `(y, T_l(y))` wherever `x0 + l y` lies in the curve support.
    pub t_l: Vec<(f64, f64)>,
}

impl RescaledView {
    pub fn coverage(&self) -> f64 {
        if self.requested == 0 {
            1.0
        } else {
            self.samples.len() as f64 / self.requested as f64
        }
    }

    /// Largest difference quotient of `T_l` over its samples.
    pub fn t_l_lipschitz(&self) -> f64 {
        self.t_l
            .windows(2)
            .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
            .fold(0.0, f64::max)
    }
}

/// Samples `l^q (phi, psi)(x0 + l y, T(x0) + l s)` at the given `(y, s)`
/// points, dropping (and counting) those that leave the unmasked cone.
/// `T_l` is evaluated at the distinct `y` values of the points.
pub fn rescale(
    sol: &FieldSolution,
    curve: &BlowupCurve,
    x0: f64,
    lambda: f64,
    points: &[(f64, f64)],
    mode: Interpolation,
) -> Result<RescaledView, ProfileError> {
    if !(lambda > 0.0) {
        return Err(ProfileError::Lambda(lambda));
    }
    let q = 1.0 / (sol.params.p - 1.0);
    let t0 = curve.eval(x0)?;
    let scale = lambda.powf(q);
    let samples = points
        .iter()
        .filter_map(|&(y, s)| {
            let (a, b) = sample(sol, x0 + lambda * y, t0 + lambda * s, mode)?;
            Some(RescaledSample {
                y,
                s,
                phi: scale * a,
                psi: scale * b,
            })
        })
        .collect();
    let mut ys: Vec<f64> = points.iter().map(|p| p.0).collect();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let t_l = ys
        .into_iter()
        .filter_map(|y| {
            scaled_blowup_time(curve, x0, lambda, y)
                .ok()
                .map(|v| (y, v))
        })
        .collect();
    Ok(RescaledView {
        x0,
        lambda,
        q,
        t0,
        samples,
        requested: points.len(),
        t_l,
    })
}

/// Probe set `{|y| <= 1, -2 <= s <= alpha y - 0.25}` on a grid of the given
/// spacing.
pub fn probe_set(alpha: f64, spacing: f64) -> Vec<(f64, f64)> {
    let n = (1.0 / spacing).round() as i64;
    let m = (2.0 / spacing).round() as i64;
    let mut out = Vec::new();
    for i in -n..=n {
        let y = i as f64 * spacing;
        for j in 0..=m {
            let s = -2.0 + j as f64 * spacing;
            if s <= alpha * y - 0.25 + 1e-12 {
                out.push((y, s));
            }
        }
    }
    out
}

pub const PROBE_SPACING: f64 = 0.125;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub lambda: f64,
    /// `sup_S |phi_l - V_phi| + |psi_l - V_psi|`.
    pub sup_error: f64,
    /// `sup_S l mu/(1 + T + l s) (V_phi + V_psi)/2`: size of the damping
    /// term the limit drops.
    pub damping_contribution: f64,
    pub probes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileConvergence {
    pub x0: f64,
    pub alpha: f64,
    pub left_slope: Option<f64>,
    pub right_slope: Option<f64>,
    pub profile: SimilarityProfile,
    pub interpolation: Interpolation,
    pub rows: Vec<ConvergenceRow>,
    pub nonincreasing: bool,
}

/// Error table of the rescaled field against the similarity profile with
/// `alpha = T'(x0)`, one row per `lambda`.
pub fn profile_convergence(
    sol: &FieldSolution,
    curve: &BlowupCurve,
    x0: f64,
    lambdas: &[f64],
    mode: Interpolation,
) -> Result<ProfileConvergence, ProfileError> {
    let alpha = curve.slope(x0)?;
    let (left_slope, right_slope) = curve.one_sided_slopes(x0)?;
    let profile = SimilarityProfile::new(sol.params.p, alpha)?;
    let probes = probe_set(alpha, PROBE_SPACING);
    let min = 10.0 * sol.h();
    for &lambda in lambdas {
        if !(lambda > 0.0) {
            return Err(ProfileError::Lambda(lambda));
        }
        if lambda < min * (1.0 - 1e-12) {
            return Err(ProfileError::BelowResolution { lambda, min });
        }
    }
    let mu = sol.params.mu;
    let rows: Vec<Result<ConvergenceRow, ProfileError>> = lambdas
        .par_iter()
        .map(|&lambda| {
            let view = rescale(sol, curve, x0, lambda, &probes, mode)?;
            if view.samples.len() < view.requested {
                return Err(ProfileError::Coverage {
                    lambda,
                    covered: view.samples.len(),
                    requested: view.requested,
                });
            }
            let (mut sup_error, mut damping): (f64, f64) = (0.0, 0.0);
            for smp in &view.samples {
                let (vp, vs) = profile.eval(smp.y, smp.s)?;
                sup_error = sup_error.max((smp.phi - vp).abs() + (smp.psi - vs).abs());
                let t = view.t0 + lambda * smp.s;
                damping = damping.max(lambda * mu / (1.0 + t) * 0.5 * (vp + vs));
            }
            Ok(ConvergenceRow {
                lambda,
                sup_error,
                damping_contribution: damping,
                probes: view.samples.len(),
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut order: Vec<&ConvergenceRow> = rows.iter().collect();
    order.sort_by(|a, b| b.lambda.total_cmp(&a.lambda));
    let nonincreasing = order
        .windows(2)
        .all(|w| w[1].sup_error <= w[0].sup_error * (1.0 + 1e-9) + 1e-12);
    Ok(ProfileConvergence {
        x0,
        alpha,
        left_slope,
        right_slope,
        profile,
        interpolation: mode,
        rows,
        nonincreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{ConeLattice, FieldParams};

    #[test]
    fn constants_examples() {
        let p = SimilarityProfile::new(2.0, 0.0).unwrap();
        assert_eq!((p.a, p.c_phi, p.c_psi), (2.0, 1.0, 1.0));
        let p = SimilarityProfile::new(2.0, 0.5).unwrap();
        assert!(
            (p.a - 1.5).abs() < 1e-15
                && (p.c_phi - 0.375).abs() < 1e-15
                && (p.c_psi - 1.125).abs() < 1e-15
        );
        assert!(SimilarityProfile::new(2.0, 1.0).is_err());
        assert!(SimilarityProfile::new(2.0, -1.2).is_err());
        for (pp, al) in [(1.5, 0.3), (3.0, -0.7)] {
            let a = SimilarityProfile::new(pp, al).unwrap();
            let b = SimilarityProfile::new(pp, -al).unwrap();
            assert!((a.c_phi - b.c_psi).abs() < 1e-14);
            assert_eq!(a.c_phi + a.c_psi, a.a);
        }
    }

    #[test]
    fn eval_examples() {
        let p = SimilarityProfile::new(2.0, 0.0).unwrap();
        assert_eq!(p.eval(0.0, -1.0).unwrap(), (1.0, 1.0));
        let p = SimilarityProfile::new(2.0, 0.5).unwrap();
        let (a, b) = p.eval(0.0, -1.0).unwrap();
        assert!((a - 0.375).abs() < 1e-15 && (b - 1.125).abs() < 1e-15);
        assert!(matches!(
            p.eval(2.0, 1.0),
            Err(ProfileError::OutsideDomain { .. })
        ));
    }

    #[test]
    fn residual_zero_and_fault() {
        let p = SimilarityProfile::new(2.0, 0.5).unwrap();
        let r = p.residual(&[(0.0, -1.0)]).unwrap();
        assert!(r.max_abs < 1e-15);
        let bad = p.with_constants(p.c_phi * 1.01, p.c_psi);
        assert!(bad.residual(&[(0.0, -1.0), (0.3, -0.2)]).unwrap().max_rel > 1e-3);
        assert_eq!(p.residual(&[]), Err(ProfileError::NoSamples));
    }

    #[test]
    fn affine_curve_scaling() {
        let xs: Vec<f64> = (0..=20).map(|i| -1.0 + 0.1 * i as f64).collect();
        let ts = xs.iter().map(|x| 0.5 + 0.1 * x).collect();
        let curve = BlowupCurve::from_samples(xs, ts);
        for y in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            let v = scaled_blowup_time(&curve, 0.0, 0.1, y).unwrap();
            assert!((v - 0.1 * y).abs() < 1e-14);
        }
        assert_eq!(scaled_blowup_time(&curve, 0.3, 0.05, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn unit_scale_is_identity() {
        let lat = ConeLattice::new(0.125, 1.0, 1.0).unwrap();
        let params = FieldParams {
            p: 2.0,
            mu: 0.0,
            gamma1: 1.0,
            gamma2: 1.0,
            v_max: 1e9,
        };
        let sol = FieldSolution::from_fn(lat, params, |x, t| (2.0 + x + t, 3.0 - x));
        let curve = BlowupCurve::from_samples(vec![-1.0, 0.0, 1.0], vec![1.0; 3]);
        let pts = [(0.0, -0.5), (0.25, -0.75), (-0.5, -1.0)];
        let view = rescale(&sol, &curve, 0.0, 1.0, &pts, Interpolation::Bilinear).unwrap();
        assert_eq!(view.coverage(), 1.0);
        for (smp, (y, s)) in view.samples.iter().zip(pts) {
            let (x, t) = (y, 1.0 + s);
            assert!((smp.phi - (2.0 + x + t)).abs() < 1e-14 && (smp.psi - (3.0 - x)).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_profile_field_is_a_fixpoint() {
        let h = 1.0 / 1024.0;
        let lat = ConeLattice::new(h, 0.25, 0.5).unwrap();
        let params = FieldParams {
            p: 2.0,
            mu: 0.0,
            gamma1: 1.0,
            gamma2: 1.0,
            v_max: 1e12,
        };
        let sol = FieldSolution::from_fn(lat, params, |_, t| {
            let r = 1.0 / (0.5 - t);
            (r, r)
        });
        let curve = BlowupCurve::from_samples(vec![-0.25, 0.0, 0.25], vec![0.5; 3]);
        let conv = profile_convergence(
            &sol,
            &curve,
            0.0,
            &[0.125, 0.0625, 0.03125],
            Interpolation::Bilinear,
        )
        .unwrap();
        assert_eq!(conv.alpha, 0.0);
        for row in &conv.rows {
            assert!(row.sup_error < 1e-12, "{row:?}");
            assert_eq!(row.damping_contribution, 0.0);
        }
        assert!(matches!(
            profile_convergence(&sol, &curve, 0.0, &[0.001], Interpolation::default()),
            Err(ProfileError::BelowResolution { .. })
        ));
    }
}
