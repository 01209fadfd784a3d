//! Blow-up curve extraction from a solved field.
//!
//! At each abscissa the level-set times `E_M(x)` (first time `phi + psi`
//! reaches `M`) are measured over the threshold ladder and extrapolated to
//! `M -> infinity` with the rate law `T - E_M ~ K M^{-(p-1)}`.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::ProblemConfig;
use crate::solver::FieldSolution;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurveError {
    #[error("x = {0} is not a lattice abscissa")]
    NotAColumn(f64),
    #[error("level {level} not reached before the mask at x = {x}")]
    NotReached { x: f64, level: f64 },
    #[error("level {level} already exceeded at t = 0 for x = {x}")]
    AlreadyExceeded { x: f64, level: f64 },
    #[error("ladder needs at least two levels, got {0}")]
    TooFewLevels(usize),
    #[error("ladder spread max/min = {0} < 1.5; extrapolation ill-conditioned")]
    IllConditioned(f64),
    #[error("only {0} abscissas produced estimates (need 3)")]
    InsufficientCoverage(usize),
    #[error("x = {x} outside curve support [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },
    #[error("point (x, t) = ({x}, {t}) is not below the curve")]
    AboveCurve { x: f64, t: f64 },
    #[error("need at least {need} abscissas, got {got}")]
    TooFewAbscissas { need: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LadderPoint {
    pub level: f64,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LadderFit {
    pub t_hat: f64,
    pub k_hat: f64,
    /// Max absolute residual of the fit (0 for two points).
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupCurve {
    pub xs: Vec<f64>,
    pub t_hat: Vec<f64>,
    pub k_hat: Vec<f64>,
    pub fit_residual: Vec<f64>,
    pub ladder: Vec<Vec<LadderPoint>>,
    pub t_prime: Vec<f64>,
    pub lipschitz_hat: f64,
}

impl BlowupCurve {
    /// Curve from raw samples (no ladder data). `xs` must be strictly
    /// increasing.
    pub fn from_samples(xs: Vec<f64>, t_hat: Vec<f64>) -> Self {
        assert_eq!(xs.len(), t_hat.len());
        assert!(xs.windows(2).all(|w| w[0] < w[1]), "xs must increase");
        let n = xs.len();
        Self::assemble(xs, t_hat, vec![0.0; n], vec![0.0; n], vec![Vec::new(); n])
    }

    fn assemble(
        xs: Vec<f64>,
        t_hat: Vec<f64>,
        k_hat: Vec<f64>,
        fit_residual: Vec<f64>,
        ladder: Vec<Vec<LadderPoint>>,
    ) -> Self {
        let t_prime = derivative_profile(&xs, &t_hat);
        let lipschitz_hat = xs
            .windows(2)
            .zip(t_hat.windows(2))
            .map(|(x, t)| ((t[1] - t[0]) / (x[1] - x[0])).abs())
            .fold(0.0, f64::max);
        BlowupCurve {
            xs,
            t_hat,
            k_hat,
            fit_residual,
            ladder,
            t_prime,
            lipschitz_hat,
        }
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn support(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    fn segment(&self, x: f64) -> Result<usize, CurveError> {
        let (lo, hi) = self.support();
        if !(x >= lo && x <= hi) {
            return Err(CurveError::OutOfRange { x, lo, hi });
        }
        let i = self.xs.partition_point(|&v| v <= x);
        Ok(i.saturating_sub(1).min(self.xs.len().saturating_sub(2)))
    }

    /// Piecewise-linear `T_hat(x)`.
    pub fn eval(&self, x: f64) -> Result<f64, CurveError> {
        if self.xs.len() == 1 {
            return if x == self.xs[0] {
                Ok(self.t_hat[0])
            } else {
                Err(CurveError::OutOfRange {
                    x,
                    lo: self.xs[0],
                    hi: self.xs[0],
                })
            };
        }
        let i = self.segment(x)?;
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let w = (x - x0) / (x1 - x0);
        Ok(self.t_hat[i] + w * (self.t_hat[i + 1] - self.t_hat[i]))
    }

    /// Index of the sample nearest to `x`.
    pub fn nearest(&self, x: f64) -> Result<usize, CurveError> {
        let i = self.segment(x)?;
        Ok(if (x - self.xs[i]).abs() <= (self.xs[i + 1] - x).abs() {
            i
        } else {
            i + 1
        })
    }

    /// Derivative `T'` at the sample nearest to `x`.
    pub fn slope(&self, x: f64) -> Result<f64, CurveError> {
        Ok(self.t_prime[self.nearest(x)?])
    }

    /// Backward and forward difference quotients at the sample nearest to
    /// `x` (one of them is `None` at the ends).
    pub fn one_sided_slopes(&self, x: f64) -> Result<(Option<f64>, Option<f64>), CurveError> {
        let i = self.nearest(x)?;
        let q = |a: usize, b: usize| (self.t_hat[b] - self.t_hat[a]) / (self.xs[b] - self.xs[a]);
        let left = (i > 0).then(|| q(i - 1, i));
        let right = (i + 1 < self.xs.len()).then(|| q(i, i + 1));
        Ok((left, right))
    }
}

/// Derivative of samples on a possibly nonuniform grid: three-point
/// centered formula inside, three-point one-sided formulas at the ends.
pub fn derivative_profile(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    match n {
        0 => return Vec::new(),
        1 => return vec![0.0],
        2 => {
            let d = (ys[1] - ys[0]) / (xs[1] - xs[0]);
            return vec![d, d];
        }
        _ => {}
    }
    // derivative at xs[j] of the Newton parabola through points a, b, c;
    // divided differences keep constant data exactly flat
    let quad = |a: usize, b: usize, c: usize, j: usize| {
        let ab = (ys[b] - ys[a]) / (xs[b] - xs[a]);
        let bc = (ys[c] - ys[b]) / (xs[c] - xs[b]);
        let abc = (bc - ab) / (xs[c] - xs[a]);
        ab + abc * ((xs[j] - xs[a]) + (xs[j] - xs[b]))
    };
    (0..n)
        .map(|i| {
            if i == 0 {
                quad(0, 1, 2, 0)
            } else if i == n - 1 {
                quad(n - 3, n - 2, n - 1, n - 1)
            } else {
                quad(i - 1, i, i + 1, i)
            }
        })
        .collect()
}

/// First time `phi + psi` reaches `level` in lattice column `c`.
///
/// Between the bracketing rows the crossing is located by linear
/// interpolation in `v = (phi + psi)^{1-p}`, which is close to linear in
/// `t` near blow-up, unlike `phi + psi` itself.
pub fn level_time_column(sol: &FieldSolution, c: isize, level: f64) -> Result<f64, CurveError> {
    let lat = &sol.lattice;
    let x = lat.x(c);
    let col = sol.column(c);
    let p = sol.params.p;
    let mut prev: Option<(usize, f64)> = None;
    for (k, a, b) in col {
        let y = a + b;
        if y >= level {
            return match prev {
                None if y == level => Ok(lat.t(k)),
                None => Err(CurveError::AlreadyExceeded { x, level }),
                Some((kp, yp)) => {
                    let (vp, vk, vm) = (yp.powf(1.0 - p), y.powf(1.0 - p), level.powf(1.0 - p));
                    let w = ((vp - vm) / (vp - vk)).clamp(0.0, 1.0);
                    Ok(lat.t(kp) + w * lat.h())
                }
            };
        }
        prev = Some((k, y));
    }
    Err(CurveError::NotReached { x, level })
}

/// [`level_time_column`] addressed by abscissa.
pub fn level_time(sol: &FieldSolution, x: f64, level: f64) -> Result<f64, CurveError> {
    let c = sol.lattice.column_of(x).ok_or(CurveError::NotAColumn(x))?;
    level_time_column(sol, c, level)
}

/// Least-squares fit of `E_M = T - K M^{-(p-1)}`.
pub fn extrapolate_blowup_time(ladder: &[LadderPoint], p: f64) -> Result<LadderFit, CurveError> {
    if ladder.len() < 2 {
        return Err(CurveError::TooFewLevels(ladder.len()));
    }
    let (lo, hi) = ladder.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), l| {
        (lo.min(l.level), hi.max(l.level))
    });
    if hi / lo < 1.5 {
        return Err(CurveError::IllConditioned(hi / lo));
    }
    let r: Vec<f64> = ladder.iter().map(|l| l.level.powf(1.0 - p)).collect();
    let n = ladder.len() as f64;
    let rm = r.iter().sum::<f64>() / n;
    let em = ladder.iter().map(|l| l.time).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (ri, l) in r.iter().zip(ladder) {
        sxy += (ri - rm) * (l.time - em);
        sxx += (ri - rm) * (ri - rm);
    }
    let slope = sxy / sxx;
    let t_hat = em - slope * rm;
    let residual = r
        .iter()
        .zip(ladder)
        .map(|(ri, l)| (l.time - (t_hat + slope * ri)).abs())
        .fold(0.0, f64::max);
    Ok(LadderFit {
        t_hat,
        k_hat: -slope,
        residual,
    })
}

/// Ladder and fit at every column above the base ball `|x| <= R*`.
/// Columns with fewer than two reachable levels are skipped.
pub fn curve_extract(sol: &FieldSolution, cfg: &ProblemConfig) -> Result<BlowupCurve, CurveError> {
    let p = sol.params.p;
    let cols: Vec<isize> = sol.lattice.full_columns().collect();
    let per_col: Vec<Option<(f64, Vec<LadderPoint>, LadderFit)>> = cols
        .par_iter()
        .map(|&c| {
            let ladder: Vec<LadderPoint> = cfg
                .thresholds
                .iter()
                .filter_map(|&m| {
                    level_time_column(sol, c, m)
                        .ok()
                        .map(|time| LadderPoint { level: m, time })
                })
                .collect();
            let fit = extrapolate_blowup_time(&ladder, p).ok()?;
            Some((sol.lattice.x(c), ladder, fit))
        })
        .collect();
    let kept: Vec<_> = per_col.into_iter().flatten().collect();
    if kept.len() < 3 {
        return Err(CurveError::InsufficientCoverage(kept.len()));
    }
    let mut xs = Vec::with_capacity(kept.len());
    let mut t_hat = Vec::with_capacity(kept.len());
    let mut k_hat = Vec::with_capacity(kept.len());
    let mut res = Vec::with_capacity(kept.len());
    let mut ladders = Vec::with_capacity(kept.len());
    for (x, ladder, fit) in kept {
        xs.push(x);
        t_hat.push(fit.t_hat);
        k_hat.push(fit.k_hat);
        res.push(fit.residual);
        ladders.push(ladder);
    }
    Ok(BlowupCurve::assemble(xs, t_hat, k_hat, res, ladders))
}

fn point_segment_distance(px: f64, pt: f64, ax: f64, at: f64, bx: f64, bt: f64) -> f64 {
    let (dx, dt) = (bx - ax, bt - at);
    let len2 = dx * dx + dt * dt;
    let w = if len2 > 0.0 {
        (((px - ax) * dx + (pt - at) * dt) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (px - (ax + w * dx)).hypot(pt - (at + w * dt))
}

/// Euclidean distance from `(x, t)` to the polyline through the curve
/// samples.
pub fn distance_to_curve(curve: &BlowupCurve, x: f64, t: f64) -> Result<f64, CurveError> {
    let tx = curve.eval(x)?;
    if !(t < tx) {
        return Err(CurveError::AboveCurve { x, t });
    }
    if curve.len() == 1 {
        return Ok(tx - t);
    }
    Ok((0..curve.len() - 1)
        .map(|i| {
            point_segment_distance(
                x,
                t,
                curve.xs[i],
                curve.t_hat[i],
                curve.xs[i + 1],
                curve.t_hat[i + 1],
            )
        })
        .fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SandwichProbe {
    pub samples: usize,
    pub violations: usize,
    /// Smallest `d / (T - t)`; the lower bound is `1/sqrt(2)`.
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// Checks `(T - t)/sqrt(2) <= d(x, t) <= T - t` at random points below the
/// curve, with `t` drawn from `[T(x) - depth, T(x))`.
pub fn sandwich_probe<R: Rng>(
    curve: &BlowupCurve,
    samples: usize,
    depth: f64,
    rng: &mut R,
) -> Result<SandwichProbe, CurveError> {
    let (lo, hi) = curve.support();
    let mut out = SandwichProbe {
        samples,
        violations: 0,
        min_ratio: f64::INFINITY,
        max_ratio: 0.0,
    };
    for _ in 0..samples {
        let x = rng.gen_range(lo..=hi);
        let tx = curve.eval(x)?;
        let t = tx - depth * (1.0 - rng.gen::<f64>());
        let d = distance_to_curve(curve, x, t)?;
        let gap = tx - t;
        let ratio = d / gap;
        out.min_ratio = out.min_ratio.min(ratio);
        out.max_ratio = out.max_ratio.max(ratio);
        let slack = 1e-12 * gap.max(1.0);
        if d < gap / std::f64::consts::SQRT_2 - slack || d > gap + slack {
            out.violations += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuityReport {
    /// `max_i |T'(x_{i+1}) - T'(x_i)|`.
    pub modulus: f64,
    pub at_x: f64,
    pub spacing: f64,
}

/// Discrete modulus of continuity of `T'`. For a C^1 curve it shrinks under
/// grid refinement.
pub fn derivative_continuity(curve: &BlowupCurve) -> Result<ContinuityReport, CurveError> {
    if curve.len() < 5 {
        return Err(CurveError::TooFewAbscissas {
            need: 5,
            got: curve.len(),
        });
    }
    let (mut modulus, mut at_x) = (0.0, curve.xs[0]);
    for i in 0..curve.len() - 1 {
        let d = (curve.t_prime[i + 1] - curve.t_prime[i]).abs();
        if d > modulus {
            modulus = d;
            at_x = 0.5 * (curve.xs[i] + curve.xs[i + 1]);
        }
    }
    let spacing = (curve.xs[curve.len() - 1] - curve.xs[0]) / (curve.len() - 1) as f64;
    Ok(ContinuityReport {
        modulus,
        at_x,
        spacing,
    })
}

/// `fine.modulus / coarse.modulus`; zero when both vanish.
pub fn refinement_ratio(coarse: &ContinuityReport, fine: &ContinuityReport) -> f64 {
    if coarse.modulus == 0.0 {
        if fine.modulus == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        fine.modulus / coarse.modulus
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitialData;
    use crate::solver::{solve_characteristic, ConeLattice, FieldParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn closed_form_field(h: f64) -> FieldSolution {
        // undamped p = 2, phi = psi = 1/(T - t), blow-up at T = 0.3
        let lat = ConeLattice::new(h, 0.2, 0.28).unwrap();
        let params = FieldParams {
            p: 2.0,
            mu: 0.0,
            gamma1: 1.0,
            gamma2: 1.0,
            v_max: 1e9,
        };
        FieldSolution::from_fn(lat, params, |_, t| (1.0 / (0.3 - t), 1.0 / (0.3 - t)))
    }

    #[test]
    fn level_time_exact_for_power_law() {
        // (phi+psi)^{-1} is linear in t, so v-interpolation is exact
        let sol = closed_form_field(0.01);
        for m in [10.0, 25.0, 100.0] {
            let e = level_time(&sol, 0.0, m).unwrap();
            assert!((e - (0.3 - 2.0 / m)).abs() < 1e-12, "{m}: {e}");
        }
        assert!(matches!(
            level_time(&sol, 0.0, 1e6),
            Err(CurveError::NotReached { .. })
        ));
        assert!(matches!(
            level_time(&sol, 0.005, 10.0),
            Err(CurveError::NotAColumn(_))
        ));
        assert!(matches!(
            level_time(&sol, 0.0, 1.0),
            Err(CurveError::AlreadyExceeded { .. })
        ));
        let e0 = level_time(&sol, 0.0, 2.0 / 0.3).unwrap();
        assert!(e0.abs() < 1e-12);
    }

    #[test]
    fn two_point_formula() {
        let (e1, e2) = (1.225f64.ln(), 1.2375f64.ln());
        let ladder = [
            LadderPoint {
                level: 100.0,
                time: e1,
            },
            LadderPoint {
                level: 200.0,
                time: e2,
            },
        ];
        let fit = extrapolate_blowup_time(&ladder, 2.0).unwrap();
        assert!((fit.t_hat - (2.0 * e2 - e1)).abs() < 1e-14);
        assert!((fit.t_hat - 0.2232453).abs() < 1e-6);
        assert!((fit.t_hat - 1.25f64.ln()).abs() < 1.1e-4);
        assert_eq!(fit.residual, 0.0);
    }

    #[test]
    fn exact_law_recovered() {
        for p in [1.5, 2.0, 3.0] {
            let ladder: Vec<_> = [50.0, 100.0, 200.0, 400.0]
                .iter()
                .map(|&m: &f64| LadderPoint {
                    level: m,
                    time: 0.7 - 3.0 * m.powf(1.0 - p),
                })
                .collect();
            let fit = extrapolate_blowup_time(&ladder, p).unwrap();
            assert!((fit.t_hat - 0.7).abs() < 1e-13 && (fit.k_hat - 3.0).abs() < 1e-10);
        }
        let one = [LadderPoint {
            level: 1.0,
            time: 0.1,
        }];
        assert_eq!(
            extrapolate_blowup_time(&one, 2.0),
            Err(CurveError::TooFewLevels(1))
        );
        let close = [
            LadderPoint {
                level: 100.0,
                time: 0.1,
            },
            LadderPoint {
                level: 140.0,
                time: 0.11,
            },
        ];
        assert!(matches!(
            extrapolate_blowup_time(&close, 2.0),
            Err(CurveError::IllConditioned(_))
        ));
    }

    #[test]
    fn derivative_profile_exact_on_quadratics() {
        let xs = [0.0, 0.1, 0.25, 0.3, 0.5];
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x - 3.0 * x * x).collect();
        for (x, d) in xs.iter().zip(derivative_profile(&xs, &ys)) {
            assert!((d - (2.0 - 6.0 * x)).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_examples() {
        let flat = BlowupCurve::from_samples(vec![-1.0, 0.0, 1.0], vec![0.5; 3]);
        assert!((distance_to_curve(&flat, 0.3, 0.1).unwrap() - 0.4).abs() < 1e-15);
        let line = BlowupCurve::from_samples(vec![-4.0, 0.0, 4.0], vec![-2.0, 0.0, 2.0]);
        let d = distance_to_curve(&line, 0.0, -1.0).unwrap();
        assert!((d - 1.0 / 1.25f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            distance_to_curve(&line, 5.0, -1.0),
            Err(CurveError::OutOfRange { .. })
        ));
        assert!(matches!(
            distance_to_curve(&line, 0.0, 1.0),
            Err(CurveError::AboveCurve { .. })
        ));
    }

    #[test]
    fn sandwich_on_wiggly_curve() {
        let xs: Vec<f64> = (0..=40).map(|i| -1.0 + 0.05 * i as f64).collect();
        let ts: Vec<f64> = xs
            .iter()
            .map(|x| 0.5 + 0.4 * (3.0 * x).sin() / 3.0)
            .collect();
        let curve = BlowupCurve::from_samples(xs, ts);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let probe = sandwich_probe(&curve, 100, 0.4, &mut rng).unwrap();
        assert_eq!(probe.violations, 0);
        assert!(probe.min_ratio >= std::f64::consts::FRAC_1_SQRT_2 - 1e-12);
    }

    #[test]
    fn continuity_flat_and_linear() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let flat = BlowupCurve::from_samples(xs.clone(), vec![0.2; 10]);
        assert_eq!(derivative_continuity(&flat).unwrap().modulus, 0.0);
        let lin = BlowupCurve::from_samples(xs.clone(), xs.iter().map(|x| 0.3 * x).collect());
        assert!(derivative_continuity(&lin).unwrap().modulus < 1e-14);
        assert!((lin.lipschitz_hat - 0.3).abs() < 1e-14);
        let short = BlowupCurve::from_samples(xs[..4].to_vec(), vec![0.0; 4]);
        assert!(derivative_continuity(&short).is_err());
    }

    #[test]
    fn constant_data_curve_is_flat() {
        let cfg = ProblemConfig {
            r_star: 0.02,
            ..ProblemConfig::reference()
        };
        let sol = solve_characteristic(&cfg, &InitialData::constant(5.0, 5.0)).unwrap();
        let curve = curve_extract(&sol, &cfg).unwrap();
        assert_eq!(curve.len(), 41);
        assert_eq!(curve.lipschitz_hat, 0.0);
        let t1 = curve.t_hat[20];
        assert!((t1 - 0.2214).abs() < 5e-3, "{t1}");
        for (m, pts) in curve.ladder[0].windows(2).enumerate() {
            assert!(pts[1].time > pts[0].time, "level {m}");
        }
        assert!(curve.t_hat[0] > curve.ladder[0].last().unwrap().time);
    }
}
