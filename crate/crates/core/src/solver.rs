//! Characteristic solver for the Riemann-invariant system
//!
//! ```text
//! D_- phi = N(phi, psi, t),   D_+ psi = N(phi, psi, t),
//! N = 2^{-p} (phi + psi)^p - mu/(1+t) (phi + psi)/2
//! ```
//!
//! on the cone of dependence `K_{R*,T*}`. The lattice uses `dt = dx = h`, so
//! `phi(x, t+h)` is transported exactly from `(x+h, t)` and `psi(x, t+h)`
//! from `(x-h, t)`; only the source integral along each characteristic is
//! approximated. The successive-approximation scheme of the existence proof
//! is available separately as [`picard_sweep`].

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expr;
use crate::model::{validate_assumptions, AssumptionId, InitialData, ModelError, ProblemConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("configuration rejected: {0}")]
    Config(#[from] ModelError),
    #[error("assumption hard failure: {0:?}")]
    Assumptions(Vec<AssumptionId>),
    #[error("lattice: {0}")]
    Lattice(String),
    #[error("phi + psi = {sum} <= 0 at (x, t) = ({x}, {t}); outside the positive regime")]
    Regime { x: f64, t: f64, sum: f64 },
    #[error("iterate does not live on the configured lattice")]
    LatticeMismatch,
}

/// Source integration along characteristics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Corrector {
    /// Euler predictor followed by one trapezoidal corrector pass.
    #[default]
    Trapezoid,
    /// Trapezoidal corrector iterated `k` additional times (towards the
    /// implicit trapezoidal rule).
    FixedPoint(u32),
    /// Fourth-order Adams-Bashforth predictor with an Adams-Moulton corrector,
    /// using the earlier nodes on the same characteristic. The first three
    /// rows use the trapezoid scheme.
    Adams4,
}

impl fmt::Display for Corrector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Corrector::Trapezoid => write!(f, "trapezoid"),
            Corrector::FixedPoint(k) => write!(f, "fixed_point_{k}"),
            Corrector::Adams4 => write!(f, "adams4"),
        }
    }
}

impl FromStr for Corrector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trapezoid" => Ok(Corrector::Trapezoid),
            "adams4" => Ok(Corrector::Adams4),
            _ => s
                .strip_prefix("fixed_point_")
                .and_then(|k| k.parse().ok())
                .map(Corrector::FixedPoint)
                .ok_or_else(|| {
                    format!("unknown corrector `{s}` (trapezoid, fixed_point_<k>, adams4)")
                }),
        }
    }
}

impl TryFrom<String> for Corrector {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Corrector> for String {
    fn from(c: Corrector) -> String {
        c.to_string()
    }
}

/// Unit-CFL lattice over the cone of dependence. Row `k` sits at `t = k h`
/// and holds the columns `c` with `|c| <= N - k`, where `N h = R* + T*`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeLattice {
    h: f64,
    half: usize,
    rows: usize,
    offsets: Vec<usize>,
}

impl ConeLattice {
    pub fn new(h: f64, r_star: f64, t_star: f64) -> Result<Self, SolverError> {
        if !(h > 0.0) || !(r_star > 0.0) || !(t_star > 0.0) {
            return Err(SolverError::Lattice("h, R*, T* must be positive".into()));
        }
        let ratio = (r_star + t_star) / h;
        let half = ratio.round();
        if (ratio - half).abs() > 1e-9 * ratio.max(1.0) {
            return Err(SolverError::Lattice(format!(
                "h = {h} does not divide R* + T* = {}",
                r_star + t_star
            )));
        }
        let half = half as usize;
        let top = (t_star / h + 1e-9).floor() as usize;
        if top >= half {
            return Err(SolverError::Lattice(
                "T* must leave a nonempty top row".into(),
            ));
        }
        let rows = top + 1;
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut acc = 0;
        for k in 0..rows {
            offsets.push(acc);
            acc += 2 * (half - k) + 1;
        }
        offsets.push(acc);
        Ok(ConeLattice {
            h,
            half,
            rows,
            offsets,
        })
    }

    pub fn for_config(cfg: &ProblemConfig) -> Result<Self, SolverError> {
        Self::new(cfg.h, cfg.r_star, cfg.t_star)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// `N = (R* + T*)/h`.
    pub fn half_nodes(&self) -> usize {
        self.half
    }

    pub fn num_rows(&self) -> usize {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.offsets[self.rows]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    pub fn x(&self, c: isize) -> f64 {
        c as f64 * self.h
    }

    pub fn row_half(&self, k: usize) -> usize {
        self.half - k
    }

    pub fn columns(&self, k: usize) -> RangeInclusive<isize> {
        let w = self.row_half(k) as isize;
        -w..=w
    }

    /// Columns present in every row; these cover the base ball `|x| <= R*`.
    pub fn full_columns(&self) -> RangeInclusive<isize> {
        self.columns(self.rows - 1)
    }

    /// Last row containing column `c`.
    pub fn column_top(&self, c: isize) -> Option<usize> {
        let a = c.unsigned_abs();
        (a <= self.half).then(|| (self.half - a).min(self.rows - 1))
    }

    pub fn index(&self, k: usize, c: isize) -> Option<usize> {
        if k >= self.rows {
            return None;
        }
        let w = self.row_half(k) as isize;
        (c.abs() <= w).then(|| self.offsets[k] + (c + w) as usize)
    }

    pub fn row_range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    /// Column whose abscissa is within `1e-9 h` of `x`.
    pub fn column_of(&self, x: f64) -> Option<isize> {
        let c = (x / self.h).round();
        ((x / self.h - c).abs() < 1e-9 && c.abs() <= self.half as f64).then_some(c as isize)
    }
}

/// Physical parameters carried alongside the lattice values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    pub p: f64,
    pub mu: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub v_max: f64,
}

impl FieldParams {
    pub fn from_config(cfg: &ProblemConfig) -> Self {
        FieldParams {
            p: cfg.p,
            mu: cfg.mu,
            gamma1: cfg.gamma1,
            gamma2: cfg.gamma2,
            v_max: cfg.v_max,
        }
    }
}

/// Lattice values of `(phi, psi)` with the blow-up mask. Masked nodes hold
/// `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSolution {
    pub lattice: ConeLattice,
    pub params: FieldParams,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub blown: Vec<bool>,
    /// First masked row per column, indexed by `c + N`.
    pub first_blow_row: Vec<Option<usize>>,
}

impl FieldSolution {
    fn from_parts(
        lattice: ConeLattice,
        params: FieldParams,
        phi: Vec<f64>,
        psi: Vec<f64>,
        blown: Vec<bool>,
    ) -> Self {
        let half = lattice.half_nodes() as isize;
        let first_blow_row = (-half..=half)
            .map(|c| {
                let top = lattice.column_top(c)?;
                (0..=top).find(|&k| blown[lattice.index(k, c).unwrap()])
            })
            .collect();
        FieldSolution {
            lattice,
            params,
            phi,
            psi,
            blown,
            first_blow_row,
        }
    }

    /// Field sampled from a closure, masked where it exceeds `params.v_max`
    /// or is non-finite. The mask is closed upwards in `t`.
    pub fn from_fn(
        lattice: ConeLattice,
        params: FieldParams,
        f: impl Fn(f64, f64) -> (f64, f64),
    ) -> Self {
        let n = lattice.len();
        let (mut phi, mut psi, mut blown) = (vec![0.0; n], vec![0.0; n], vec![false; n]);
        for k in 0..lattice.num_rows() {
            for c in lattice.columns(k) {
                let i = lattice.index(k, c).unwrap();
                let (a, b) = f(lattice.x(c), lattice.t(k));
                let below = k > 0 && blown[lattice.index(k - 1, c).unwrap()];
                let bad = below
                    || !a.is_finite()
                    || !b.is_finite()
                    || a > params.v_max
                    || b > params.v_max;
                blown[i] = bad;
                phi[i] = if bad { f64::NAN } else { a };
                psi[i] = if bad { f64::NAN } else { b };
            }
        }
        Self::from_parts(lattice, params, phi, psi, blown)
    }

    /// Rebuilds a solution from raw node arrays, e.g. after reading a field CSV.
    pub fn from_nodes(
        lattice: ConeLattice,
        params: FieldParams,
        phi: Vec<f64>,
        psi: Vec<f64>,
        blown: Vec<bool>,
    ) -> Result<Self, SolverError> {
        let n = lattice.len();
        if phi.len() != n || psi.len() != n || blown.len() != n {
            return Err(SolverError::LatticeMismatch);
        }
        Ok(Self::from_parts(lattice, params, phi, psi, blown))
    }

    pub fn h(&self) -> f64 {
        self.lattice.h()
    }

    fn node(&self, k: usize, c: isize) -> Option<usize> {
        self.lattice.index(k, c).filter(|&i| !self.blown[i])
    }

    /// `phi` at an unmasked node.
    pub fn phi_at(&self, k: usize, c: isize) -> Option<f64> {
        self.node(k, c).map(|i| self.phi[i])
    }

    pub fn psi_at(&self, k: usize, c: isize) -> Option<f64> {
        self.node(k, c).map(|i| self.psi[i])
    }

    /// `phi + psi` at an unmasked node.
    pub fn sum_at(&self, k: usize, c: isize) -> Option<f64> {
        self.node(k, c).map(|i| self.phi[i] + self.psi[i])
    }

    pub fn is_blown(&self, k: usize, c: isize) -> Option<bool> {
        self.lattice.index(k, c).map(|i| self.blown[i])
    }

    pub fn first_blow_row(&self, c: isize) -> Option<usize> {
        let i = c + self.lattice.half_nodes() as isize;
        self.first_blow_row
            .get(usize::try_from(i).ok()?)
            .copied()
            .flatten()
    }

    /// Unmasked rows of column `c` as `(k, phi, psi)`.
    pub fn column(&self, c: isize) -> Vec<(usize, f64, f64)> {
        let Some(top) = self.lattice.column_top(c) else {
            return Vec::new();
        };
        (0..=top)
            .map_while(|k| self.node(k, c).map(|i| (k, self.phi[i], self.psi[i])))
            .collect()
    }

    pub fn masked_count(&self) -> usize {
        self.blown.iter().filter(|b| **b).count()
    }
}

/// `2^{-p} (phi+psi)^p - mu/(1+t) (phi+psi)/2`, defined for `phi + psi > 0`.
pub fn source_term(phi: f64, psi: f64, t: f64, p: f64, mu: f64) -> Result<f64, SolverError> {
    let s = phi + psi;
    if !(s > 0.0) || !t.is_finite() {
        return Err(SolverError::Regime {
            x: f64::NAN,
            t,
            sum: s,
        });
    }
    Ok(source(s, t, p, mu))
}

#[inline]
fn source(sum: f64, t: f64, p: f64, mu: f64) -> f64 {
    (0.5 * sum).powf(p) - mu / (1.0 + t) * 0.5 * sum
}

enum Node {
    Value(f64, f64),
    Blown,
}

/// Solves the characteristic system on the cone lattice of `cfg`.
///
/// The configuration is checked first, and runs with a condgam or A2 failure
/// are rejected before any computation.
pub fn solve_characteristic(
    cfg: &ProblemConfig,
    data: &InitialData,
) -> Result<FieldSolution, SolverError> {
    cfg.check()?;
    let report = validate_assumptions(cfg, data)?;
    let hard = report.hard_failures();
    if !hard.is_empty() {
        return Err(SolverError::Assumptions(hard));
    }
    solve_unchecked(cfg, data)
}

/// Same as [`solve_characteristic`] without the assumption gate; used for
/// configurations outside the theory (e.g. `mu = 0` comparisons).
pub fn solve_unchecked(
    cfg: &ProblemConfig,
    data: &InitialData,
) -> Result<FieldSolution, SolverError> {
    let lattice = ConeLattice::for_config(cfg)?;
    let params = FieldParams::from_config(cfg);
    let (p, mu, h, v_max) = (cfg.p, cfg.mu, cfg.h, cfg.v_max);
    let n = lattice.len();
    let mut phi = vec![f64::NAN; n];
    let mut psi = vec![f64::NAN; n];
    let mut src = vec![f64::NAN; n];
    let mut blown = vec![false; n];

    for c in lattice.columns(0) {
        let x = lattice.x(c);
        let i = lattice.index(0, c).unwrap();
        let (a, b) = (data.f_at(x)?, data.g_at(x)?);
        if a > v_max || b > v_max {
            blown[i] = true;
            continue;
        }
        if !(a + b > 0.0) {
            return Err(SolverError::Regime {
                x,
                t: 0.0,
                sum: a + b,
            });
        }
        phi[i] = a;
        psi[i] = b;
        src[i] = source(a + b, 0.0, p, mu);
    }

    for k in 0..lattice.num_rows() - 1 {
        let t_next = lattice.t(k + 1);
        let adams = cfg.corrector == Corrector::Adams4 && k >= 3;
        let extra = match cfg.corrector {
            Corrector::FixedPoint(m) => m,
            _ => 0,
        };
        let lat = &lattice;
        let (phi_r, psi_r, src_r, blown_r) = (&phi, &psi, &src, &blown);
        let row: Vec<Result<Node, SolverError>> = lattice
            .columns(k + 1)
            .into_par_iter()
            .map(|c| {
                let at = |kk: usize, cc: isize| lat.index(kk, cc).unwrap();
                let (right, left, below) = (at(k, c + 1), at(k, c - 1), at(k, c));
                if blown_r[right] || blown_r[left] || blown_r[below] {
                    return Ok(Node::Blown);
                }
                let history = |sign: isize| -> Option<[f64; 4]> {
                    let mut f = [0.0; 4];
                    for (j, slot) in f.iter_mut().enumerate() {
                        let i = at(k - j, c + sign * (j as isize + 1));
                        if blown_r[i] {
                            return None;
                        }
                        *slot = src_r[i];
                    }
                    Some(f)
                };
                let (phi0, psi0) = (phi_r[right], psi_r[left]);
                let (fa, fb) = (src_r[right], src_r[left]);
                let (a, b) = if adams {
                    let (Some(hp), Some(hm)) = (history(1), history(-1)) else {
                        return Ok(Node::Blown);
                    };
                    let ab = |f: &[f64; 4]| 55.0 * f[0] - 59.0 * f[1] + 37.0 * f[2] - 9.0 * f[3];
                    let am = |f: &[f64; 4]| 19.0 * f[0] - 5.0 * f[1] + f[2];
                    let pa = phi0 + h / 24.0 * ab(&hp);
                    let pb = psi0 + h / 24.0 * ab(&hm);
                    let s = pa + pb;
                    if !s.is_finite() {
                        return Ok(Node::Blown);
                    }
                    let n1 = source(s, t_next, p, mu);
                    (
                        phi0 + h / 24.0 * (9.0 * n1 + am(&hp)),
                        psi0 + h / 24.0 * (9.0 * n1 + am(&hm)),
                    )
                } else {
                    let mut a = phi0 + h * fa;
                    let mut b = psi0 + h * fb;
                    for _ in 0..=extra {
                        let s = a + b;
                        if !s.is_finite() {
                            return Ok(Node::Blown);
                        }
                        let n1 = source(s, t_next, p, mu);
                        a = phi0 + 0.5 * h * (fa + n1);
                        b = psi0 + 0.5 * h * (fb + n1);
                    }
                    (a, b)
                };
                if !a.is_finite() || !b.is_finite() || a > v_max || b > v_max {
                    return Ok(Node::Blown);
                }
                if !(a + b > 0.0) {
                    return Err(SolverError::Regime {
                        x: lat.x(c),
                        t: t_next,
                        sum: a + b,
                    });
                }
                Ok(Node::Value(a, b))
            })
            .collect();
        let base = lattice.row_range(k + 1).start;
        for (j, node) in row.into_iter().enumerate() {
            let i = base + j;
            match node? {
                Node::Value(a, b) => {
                    phi[i] = a;
                    psi[i] = b;
                    src[i] = source(a + b, t_next, p, mu);
                }
                Node::Blown => blown[i] = true,
            }
        }
    }
    Ok(FieldSolution::from_parts(lattice, params, phi, psi, blown))
}

/// The constant pair `(gamma1, gamma2)` that starts the successive
/// approximations.
pub fn picard_initial(cfg: &ProblemConfig) -> Result<FieldSolution, SolverError> {
    let lattice = ConeLattice::for_config(cfg)?;
    let params = FieldParams::from_config(cfg);
    Ok(FieldSolution::from_fn(lattice, params, |_, _| {
        (cfg.gamma1, cfg.gamma2)
    }))
}

/// One successive-approximation sweep:
/// `phi_{n+1}(x,t) = f(x+t) + int_0^t N_n(x+t-s, s) ds` (and the mirror
/// formula for `psi`), with the integral evaluated by the composite
/// trapezoidal rule through the lattice nodes of the characteristic.
pub fn picard_sweep(
    iterate: &FieldSolution,
    cfg: &ProblemConfig,
    data: &InitialData,
) -> Result<FieldSolution, SolverError> {
    let lattice = iterate.lattice.clone();
    if lattice != ConeLattice::for_config(cfg)? {
        return Err(SolverError::LatticeMismatch);
    }
    let (p, mu, h, v_max) = (cfg.p, cfg.mu, cfg.h, cfg.v_max);
    let n = lattice.len();
    let mut src_n = vec![f64::NAN; n];
    for k in 0..lattice.num_rows() {
        let t = lattice.t(k);
        for i in lattice.row_range(k) {
            if !iterate.blown[i] {
                let s = iterate.phi[i] + iterate.psi[i];
                if !(s > 0.0) {
                    return Err(SolverError::Regime {
                        x: f64::NAN,
                        t,
                        sum: s,
                    });
                }
                src_n[i] = source(s, t, p, mu);
            }
        }
    }

    let mut phi = vec![f64::NAN; n];
    let mut psi = vec![f64::NAN; n];
    let mut blown = vec![false; n];
    for c in lattice.columns(0) {
        let i = lattice.index(0, c).unwrap();
        let x = lattice.x(c);
        let (a, b) = (data.f_at(x)?, data.g_at(x)?);
        if a > v_max || b > v_max {
            blown[i] = true;
        } else {
            phi[i] = a;
            psi[i] = b;
        }
    }
    for k in 0..lattice.num_rows() - 1 {
        let lat = &lattice;
        let (phi_r, psi_r, blown_r, src_r) = (&phi, &psi, &blown, &src_n);
        let row: Vec<Node> = lattice
            .columns(k + 1)
            .into_par_iter()
            .map(|c| {
                let at = |kk: usize, cc: isize| lat.index(kk, cc).unwrap();
                let (right, left, below, here) =
                    (at(k, c + 1), at(k, c - 1), at(k, c), at(k + 1, c));
                if blown_r[right] || blown_r[left] || blown_r[below] {
                    return Node::Blown;
                }
                let (nr, nl, nh) = (src_r[right], src_r[left], src_r[here]);
                if nr.is_nan() || nl.is_nan() || nh.is_nan() {
                    return Node::Blown;
                }
                let a = phi_r[right] + 0.5 * h * (nr + nh);
                let b = psi_r[left] + 0.5 * h * (nl + nh);
                if !a.is_finite() || !b.is_finite() || a > v_max || b > v_max {
                    Node::Blown
                } else {
                    Node::Value(a, b)
                }
            })
            .collect();
        let base = lattice.row_range(k + 1).start;
        for (j, node) in row.into_iter().enumerate() {
            match node {
                Node::Value(a, b) => {
                    phi[base + j] = a;
                    psi[base + j] = b;
                }
                Node::Blown => blown[base + j] = true,
            }
        }
    }
    Ok(FieldSolution::from_parts(
        lattice,
        iterate.params,
        phi,
        psi,
        blown,
    ))
}

/// Iterates `0..=sweeps` of the successive approximations.
pub fn picard_iterates(
    cfg: &ProblemConfig,
    data: &InitialData,
    sweeps: usize,
) -> Result<Vec<FieldSolution>, SolverError> {
    let mut out = vec![picard_initial(cfg)?];
    for _ in 0..sweeps {
        let next = picard_sweep(out.last().unwrap(), cfg, data)?;
        out.push(next);
    }
    Ok(out)
}

/// `u(x,t) = u0(x) + 1/2 int_0^t (phi + psi)(x,s) ds` by the trapezoidal rule
/// along each column; masked nodes get `NaN`.
pub fn reconstruct_u(sol: &FieldSolution, u0: &Expr) -> Result<Vec<f64>, SolverError> {
    let lat = &sol.lattice;
    let h = lat.h();
    let mut u = vec![f64::NAN; lat.len()];
    for c in lat.columns(0) {
        let x = lat.x(c);
        let base = u0
            .eval(x)
            .map_err(|source| SolverError::Config(ModelError::Data { x, source }))?;
        let mut acc = base;
        let mut prev: Option<f64> = None;
        for (k, a, b) in sol.column(c) {
            let s = a + b;
            if let Some(ps) = prev {
                acc += 0.25 * h * (ps + s);
            }
            u[lat.index(k, c).unwrap()] = acc;
            prev = Some(s);
        }
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{rk4_trajectory, Damping, Rk4Options};

    fn small(corrector: Corrector) -> ProblemConfig {
        ProblemConfig {
            r_star: 0.05,
            corrector,
            ..ProblemConfig::reference()
        }
    }

    #[test]
    fn lattice_shape() {
        let lat = ConeLattice::new(0.1, 0.5, 0.3).unwrap();
        assert_eq!(lat.half_nodes(), 8);
        assert_eq!(lat.num_rows(), 4);
        assert_eq!(lat.columns(0), -8..=8);
        assert_eq!(lat.columns(3), -5..=5);
        assert_eq!(lat.len(), 17 + 15 + 13 + 11);
        assert_eq!(lat.index(1, -7), Some(17));
        assert_eq!(lat.index(1, 8), None);
        assert_eq!(lat.column_top(8), Some(0));
        assert_eq!(lat.column_top(0), Some(3));
        assert!(ConeLattice::new(0.3, 0.5, 0.3).is_err());
        for k in 1..lat.num_rows() {
            let (prev, cur) = (lat.columns(k - 1), lat.columns(k));
            assert_eq!(prev.start() + 1, *cur.start());
            assert_eq!(prev.end() - 1, *cur.end());
        }
    }

    #[test]
    fn source_term_values() {
        assert_eq!(source_term(5.0, 5.0, 0.0, 2.0, 1.0).unwrap(), 20.0);
        assert_eq!(
            source_term(3.0, 4.0, 1.7, 2.5, 0.0).unwrap(),
            3.5f64.powf(2.5)
        );
        let far = source_term(5.0, 5.0, 1e12, 2.0, 1.0).unwrap();
        assert!((far - 25.0).abs() < 1e-10);
        assert!(matches!(
            source_term(-1.0, 0.5, 0.0, 2.0, 1.0),
            Err(SolverError::Regime { .. })
        ));
    }

    #[test]
    fn corrector_strings() {
        for c in [
            Corrector::Trapezoid,
            Corrector::FixedPoint(3),
            Corrector::Adams4,
        ] {
            assert_eq!(c.to_string().parse::<Corrector>().unwrap(), c);
        }
        assert!("rk4".parse::<Corrector>().is_err());
    }

    #[test]
    fn constant_data_tracks_time_dependent_ode() {
        for corrector in [Corrector::Trapezoid, Corrector::Adams4] {
            let cfg = small(corrector);
            let sol = solve_characteristic(&cfg, &InitialData::constant(5.0, 5.0)).unwrap();
            let dt = cfg.h / 20.0;
            let run = rk4_trajectory(
                2.0,
                1.0,
                5.0,
                5.0,
                &Rk4Options::new(dt, 1e8, Damping::ScaleInvariant),
            )
            .unwrap();
            let tol = if corrector == Corrector::Adams4 {
                1e-5
            } else {
                1e-3
            };
            for (k, a, b) in sol.column(0) {
                let t = sol.lattice.t(k);
                if t > 0.9 * run.detected_t {
                    break;
                }
                let y = run.states[k * 20].y;
                assert!(((a + b) - y).abs() / y < tol, "{corrector} k={k}");
            }
        }
    }

    #[test]
    fn undamped_blowup_near_two_over_gamma() {
        let cfg = ProblemConfig {
            mu: 0.0,
            v_max: 1e5,
            ..small(Corrector::Trapezoid)
        };
        let sol = solve_characteristic(&cfg, &InitialData::constant(5.0, 5.0)).unwrap();
        let k = sol.first_blow_row(0).unwrap();
        assert!(
            (sol.lattice.t(k) - 0.2).abs() <= 2.0 * cfg.h + 1e-12,
            "{}",
            sol.lattice.t(k)
        );
    }

    #[test]
    fn mask_is_upward_closed_and_staircase() {
        let cfg = small(Corrector::Adams4);
        let data = InitialData::parse("5 + 2*exp(-(x/0.1)^2)", "5").unwrap();
        let sol = solve_characteristic(&cfg, &data).unwrap();
        let lat = &sol.lattice;
        for c in lat.columns(0) {
            let top = lat.column_top(c).unwrap();
            let mut seen = false;
            for k in 0..=top {
                let b = sol.is_blown(k, c).unwrap();
                assert!(!seen || b, "mask not upward closed at c={c}");
                seen |= b;
            }
        }
        for c in lat.full_columns() {
            if let (Some(a), Some(b)) = (sol.first_blow_row(c), sol.first_blow_row(c + 1)) {
                assert!(a.abs_diff(b) <= 1);
            }
        }
    }

    #[test]
    fn positivity_and_monotonicity_in_time() {
        let cfg = small(Corrector::Adams4);
        let data = InitialData::parse("5 + 2*exp(-(x/0.1)^2)", "5 + sin(3*x)^2").unwrap();
        let sol = solve_characteristic(&cfg, &data).unwrap();
        for c in sol.lattice.columns(0) {
            let col = sol.column(c);
            for w in col.windows(2) {
                assert!(w[1].1 >= w[0].1 - 1e-12 && w[1].2 >= w[0].2 - 1e-12);
            }
            for &(_, a, b) in &col {
                assert!(a >= cfg.gamma1 - 1e-12 && b >= cfg.gamma2 - 1e-12);
            }
        }
    }

    #[test]
    fn rejects_hard_failures() {
        let cfg = ProblemConfig {
            gamma1: 3.5,
            gamma2: 3.5,
            ..small(Corrector::Trapezoid)
        };
        let err = solve_characteristic(&cfg, &InitialData::constant(3.5, 3.5)).unwrap_err();
        assert_eq!(err, SolverError::Assumptions(vec![AssumptionId::Condgam]));
    }

    #[test]
    fn first_picard_sweep_matches_exact_integral() {
        let cfg = small(Corrector::Trapezoid);
        let data = InitialData::constant(5.0, 5.0);
        let it = picard_iterates(&cfg, &data, 1).unwrap();
        let k = 100;
        let exact = 5.0 + 0.1 * 25.0 - 5.0 * 1.1f64.ln();
        assert!((exact - 7.023449).abs() < 1e-6);
        let v = it[1].phi_at(k, 0).unwrap();
        assert!((v - exact).abs() < 1e-6, "{v}");
        for c in it[1].lattice.columns(0) {
            assert_eq!(it[1].phi_at(0, c), Some(5.0));
        }
    }

    #[test]
    fn picard_initial_row_is_data() {
        let cfg = small(Corrector::Trapezoid);
        let data = InitialData::parse("5 + exp(-x^2)", "5 + 0.5*cos(x)^2").unwrap();
        let it = picard_iterates(&cfg, &data, 3).unwrap();
        for sweep in &it[1..] {
            for c in sweep.lattice.columns(0) {
                let x = sweep.lattice.x(c);
                assert_eq!(sweep.phi_at(0, c).unwrap(), data.f_at(x).unwrap());
                assert_eq!(sweep.psi_at(0, c).unwrap(), data.g_at(x).unwrap());
            }
        }
    }

    #[test]
    fn reconstruct_u_cases() {
        let lat = ConeLattice::new(0.01, 0.1, 0.1).unwrap();
        let params = FieldParams {
            p: 2.0,
            mu: 1.0,
            gamma1: 1.0,
            gamma2: 1.0,
            v_max: 1e9,
        };
        let sol = FieldSolution::from_fn(lat, params, |_, _| (1.5, 1.5));
        let u0 = Expr::parse("sin(x)").unwrap();
        let u = reconstruct_u(&sol, &u0).unwrap();
        for k in 0..sol.lattice.num_rows() {
            for c in sol.lattice.columns(k) {
                let i = sol.lattice.index(k, c).unwrap();
                let expected = sol.lattice.x(c).sin() + 1.5 * sol.lattice.t(k);
                assert!((u[i] - expected).abs() < 1e-14);
            }
        }
    }
}
