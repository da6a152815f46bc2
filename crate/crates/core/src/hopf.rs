//! Cutoff functions, the discriminant D_alpha and its scaling analysis.
//!
//! For a cutoff rho supported above R^2/2 + M and its stretch
//! rho_alpha(x) = rho(alpha x),
//!
//! ```text
//! D_alpha = int (rho_alpha'(H))^2 u_t^2 dmu + (1/n) int (rho_alpha^2)'(H) |grad_q u|^2 dmu
//!         = A + B
//! ```
//!
//! with dmu = dp dq dt. Passing to spherical coordinates in p and then to
//! H as fibre variable reduces both terms to an outer integral over (q, t)
//! and an inner one-dimensional integral in H:
//!
//! ```text
//! A = omega_n int ( int rho_alpha'(H)^2 (2(H-u))^{(n-2)/2} dH ) u_t^2 dq dt
//! B = -(omega_n (n-2)/n) int ( int rho_alpha(H)^2 (2(H-u))^{(n-4)/2} dH ) |grad_q u|^2 dq dt
//! ```
//!
//! The outer integral uses the periodic trapezoidal rule, the inner one
//! Gauss–Legendre with order doubling. [`d_alpha_direct_mc`] evaluates the
//! unreduced phase-space integrals by Monte Carlo as an independent check.

use crate::numerics::{self, gauss_doubling, pairwise_sum, sample_rng, GaussLegendre};
use crate::potential::{FourierPotential, PeriodicGrid, Potential, PotentialError};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Outer-grid resolution: points per unit of the highest frequency per axis.
pub const DEFAULT_POINTS_PER_FREQUENCY: usize = 8;
/// Starting order and relative tolerance of the inner Gauss rule.
pub const INNER_START_ORDER: usize = 64;
pub const INNER_REL_TOL: f64 = 1e-10;
const INNER_MAX_ORDER: usize = 4096;
/// Monte Carlo samples are accumulated in fixed-size chunks so that the
/// reduction tree does not depend on the thread pool.
const MC_CHUNK: usize = 8192;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HopfError {
    #[error("invalid cutoff support ({a}, {b}): need 0 < a < b")]
    InvalidSupport { a: f64, b: f64 },
    #[error("stretch factor {0} outside (0, 1)")]
    AlphaOutOfRange(f64),
    #[error("dimension {0} not supported here (need n >= 3)")]
    UnsupportedDimension(usize),
    #[error("cutoff support starts at {lower}, not above M = {bound}")]
    SupportTooLow { lower: f64, bound: f64 },
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

/// C^2 bump rho(x) = c ((x-a)(b-x))^3 / ((b-a)/2)^6 on (a, b), composed
/// with the stretch x -> alpha x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffFunction {
    a: f64,
    b: f64,
    amplitude: f64,
    alpha: f64,
}

impl CutoffFunction {
    /// Unit-height bump on `(a, b)`.
    pub fn make_bump(a: f64, b: f64) -> Result<Self, HopfError> {
        if !(a > 0.0 && a < b && b.is_finite()) {
            return Err(HopfError::InvalidSupport { a, b });
        }
        Ok(Self {
            a,
            b,
            amplitude: 1.0,
            alpha: 1.0,
        })
    }

    /// Bump on (R^2/2 + M + 1, R^2/2 + M + 2).
    pub fn default_for(radius: f64, upper_bound: f64) -> Result<Self, HopfError> {
        let base = radius * radius / 2.0 + upper_bound;
        Self::make_bump(base + 1.0, base + 2.0)
    }

    /// c * rho.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            amplitude: self.amplitude * c,
            ..*self
        }
    }

    /// rho_alpha(x) = rho(alpha x); support scales by 1/alpha.
    pub fn stretch(&self, alpha: f64) -> Result<Self, HopfError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(HopfError::AlphaOutOfRange(alpha));
        }
        Ok(Self {
            alpha: self.alpha * alpha,
            ..*self
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Closed support interval.
    pub fn support(&self) -> (f64, f64) {
        (self.a / self.alpha, self.b / self.alpha)
    }

    fn half_width_pow6(&self) -> f64 {
        ((self.b - self.a) / 2.0).powi(6)
    }

    pub fn value(&self, x: f64) -> f64 {
        let y = self.alpha * x;
        if y <= self.a || y >= self.b {
            return 0.0;
        }
        let w = (y - self.a) * (self.b - y);
        self.amplitude * w * w * w / self.half_width_pow6()
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let y = self.alpha * x;
        if y <= self.a || y >= self.b {
            return 0.0;
        }
        let w = (y - self.a) * (self.b - y);
        self.alpha * self.amplitude * 3.0 * w * w * (self.a + self.b - 2.0 * y)
            / self.half_width_pow6()
    }

    /// (rho^2)'(x) = 2 rho rho'.
    pub fn square_derivative(&self, x: f64) -> f64 {
        2.0 * self.value(x) * self.derivative(x)
    }
}

/// omega_n, the area of the unit (n-1)-sphere.
pub fn omega_n(n: usize) -> f64 {
    numerics::sphere_area(n)
}

fn integrate_over_support<F: Fn(f64) -> f64>(rho: &CutoffFunction, f: F) -> f64 {
    let (lo, hi) = rho.support();
    gauss_doubling(lo, hi, INNER_START_ORDER, INNER_MAX_ORDER, 1e-13, f).value
}

/// C1 = int rho'(x)^2 (2x)^{(n-2)/2} dx.
pub fn c1_constant(rho: &CutoffFunction, n: usize) -> f64 {
    let e = (n as f64 - 2.0) / 2.0;
    integrate_over_support(rho, |x| rho.derivative(x).powi(2) * (2.0 * x).powf(e))
}

/// C2 for the three dimension cases:
/// n = 3: int rho^2 (2x)^{-1/2}; n = 4: int rho^2; n >= 5: int rho^2 (2(x-M))^{(n-4)/2}.
pub fn c2_constant(rho: &CutoffFunction, n: usize, upper_bound: f64) -> Result<f64, HopfError> {
    match n {
        0..=2 => Err(HopfError::UnsupportedDimension(n)),
        3 => Ok(integrate_over_support(rho, |x| {
            rho.value(x).powi(2) / (2.0 * x).sqrt()
        })),
        4 => Ok(integrate_over_support(rho, |x| rho.value(x).powi(2))),
        _ => {
            let lower = rho.support().0;
            if lower <= upper_bound {
                return Err(HopfError::SupportTooLow {
                    lower,
                    bound: upper_bound,
                });
            }
            let e = (n as f64 - 4.0) / 2.0;
            Ok(integrate_over_support(rho, |x| {
                rho.value(x).powi(2) * (2.0 * (x - upper_bound)).powf(e)
            }))
        }
    }
}

/// Value with an estimate of its quadrature error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureValue {
    pub value: f64,
    pub error: f64,
}

/// Inner H-rule: Gauss nodes on the support with rho-dependent factors
/// precomputed, so each outer point costs one power per node.
struct InnerRule {
    nodes: Vec<f64>,
    /// w_i * rho'(H_i)^2
    a_weights: Vec<f64>,
    /// w_i * rho(H_i)^2
    b_weights: Vec<f64>,
    a_exp: f64,
    b_exp: f64,
    /// Relative change on the last order doubling (worst over u = 0, M).
    rel_error: f64,
}

impl InnerRule {
    fn new(rho: &CutoffFunction, n: usize, upper_bound: f64) -> Self {
        let (lo, hi) = rho.support();
        let a_exp = (n as f64 - 2.0) / 2.0;
        let b_exp = (n as f64 - 4.0) / 2.0;
        let mut order = INNER_START_ORDER;
        let mut rel_error = 0.0;
        for u in [0.0, upper_bound] {
            let fa = |h: f64| rho.derivative(h).powi(2) * (2.0 * (h - u)).powf(a_exp);
            let fb = |h: f64| rho.value(h).powi(2) * (2.0 * (h - u)).powf(b_exp);
            for est in [
                gauss_doubling(
                    lo,
                    hi,
                    INNER_START_ORDER,
                    INNER_MAX_ORDER,
                    INNER_REL_TOL,
                    fa,
                ),
                gauss_doubling(
                    lo,
                    hi,
                    INNER_START_ORDER,
                    INNER_MAX_ORDER,
                    INNER_REL_TOL,
                    fb,
                ),
            ] {
                order = order.max(est.order);
                if est.value != 0.0 {
                    rel_error = f64::max(rel_error, est.error / est.value.abs());
                }
            }
        }
        let rule = GaussLegendre::new(order);
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let mut nodes = Vec::with_capacity(order);
        let mut a_weights = Vec::with_capacity(order);
        let mut b_weights = Vec::with_capacity(order);
        for (x, w) in rule.nodes_weights() {
            let h = mid + half * x;
            nodes.push(h);
            a_weights.push(half * w * rho.derivative(h).powi(2));
            b_weights.push(half * w * rho.value(h).powi(2));
        }
        Self {
            nodes,
            a_weights,
            b_weights,
            a_exp,
            b_exp,
            rel_error,
        }
    }

    /// (int rho'^2 (2(H-u))^{(n-2)/2} dH, int rho^2 (2(H-u))^{(n-4)/2} dH).
    fn integrals(&self, u: f64) -> (f64, f64) {
        let mut fa = 0.0;
        let mut fb = 0.0;
        for ((&h, &wa), &wb) in self.nodes.iter().zip(&self.a_weights).zip(&self.b_weights) {
            let two_k = 2.0 * (h - u);
            // (2K)^{(n-4)/2} * 2K = (2K)^{(n-2)/2}
            let pb = two_k.powf(self.b_exp);
            fb += wb * pb;
            fa += wa * pb * two_k;
        }
        debug_assert!(self.a_exp - self.b_exp == 1.0);
        (fa, fb)
    }
}

/// Common preconditions: normalized potential lifted to dimension n and a
/// stretched support strictly above M.
fn prepare(
    pot: &FourierPotential,
    rho_alpha: &CutoffFunction,
    n: usize,
) -> Result<(FourierPotential, f64), HopfError> {
    let m = pot.upper_bound()?;
    let lifted = pot.embedded(n)?;
    let lower = rho_alpha.support().0;
    if lower <= m {
        return Err(HopfError::SupportTooLow { lower, bound: m });
    }
    Ok((lifted, m))
}

/// Outer trapezoidal sums of (u_t^2 F_A(u), |grad u|^2 F_B(u)) on `grid`.
fn outer_sums(
    pot: &FourierPotential,
    inner: &InnerRule,
    grid: &PeriodicGrid,
    want_a: bool,
) -> (f64, f64) {
    let n = pot.dim();
    let values: Vec<(f64, f64)> = (0..grid.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |grad, i| {
                let (q, t) = grid.point(i);
                let ut = if want_a { pot.du_dt(&q, t) } else { 0.0 };
                pot.grad_q_into(&q, t, grad);
                let g2: f64 = grad.iter().map(|x| x * x).sum();
                if ut == 0.0 && g2 == 0.0 {
                    return (0.0, 0.0);
                }
                let (fa, fb) = inner.integrals(pot.eval(&q, t));
                (ut * ut * fa, g2 * fb)
            },
        )
        .collect();
    let a: Vec<f64> = values.iter().map(|v| v.0).collect();
    let b: Vec<f64> = values.iter().map(|v| v.1).collect();
    let cells = grid.len() as f64;
    (pairwise_sum(&a) / cells, pairwise_sum(&b) / cells)
}

/// Default outer grid for a potential lifted to dimension n.
pub fn default_grid(pot: &FourierPotential, n: usize) -> Result<PeriodicGrid, HopfError> {
    Ok(PeriodicGrid::resolving(
        &pot.embedded(n)?.bandwidth(),
        DEFAULT_POINTS_PER_FREQUENCY,
    ))
}

struct Terms {
    a: QuadratureValue,
    b: QuadratureValue,
}

fn reduced_terms(
    pot: &FourierPotential,
    rho_alpha: &CutoffFunction,
    n: usize,
    grid: &PeriodicGrid,
) -> Result<Terms, HopfError> {
    let (lifted, m) = prepare(pot, rho_alpha, n)?;
    let inner = InnerRule::new(rho_alpha, n, m);
    let omega = omega_n(n);
    let b_factor = -omega * (n as f64 - 2.0) / n as f64;
    let want_a = !lifted.is_autonomous();
    let (sa, sb) = outer_sums(&lifted, &inner, grid, want_a);
    let (ca, cb) = outer_sums(&lifted, &inner, &grid.coarsened(), want_a);
    let a = omega * sa;
    let b = if n == 2 { 0.0 } else { b_factor * sb };
    let a_err = omega * (sa - ca).abs() + a.abs() * inner.rel_error;
    let b_err = if n == 2 {
        0.0
    } else {
        b_factor.abs() * (sb - cb).abs() + b.abs() * inner.rel_error
    };
    Ok(Terms {
        a: QuadratureValue {
            value: a,
            error: a_err,
        },
        b: QuadratureValue {
            value: b,
            error: b_err,
        },
    })
}

/// Term A of D_alpha by reduced quadrature. `rho_alpha` is the stretched
/// cutoff; `pot` must be normalized.
pub fn term_a_exact(
    pot: &FourierPotential,
    rho_alpha: &CutoffFunction,
    n: usize,
    grid: &PeriodicGrid,
) -> Result<QuadratureValue, HopfError> {
    Ok(reduced_terms(pot, rho_alpha, n, grid)?.a)
}

/// Term B of D_alpha in its integrated-by-parts form. Exactly 0 for n = 2.
pub fn term_b_exact(
    pot: &FourierPotential,
    rho_alpha: &CutoffFunction,
    n: usize,
    grid: &PeriodicGrid,
) -> Result<QuadratureValue, HopfError> {
    Ok(reduced_terms(pot, rho_alpha, n, grid)?.b)
}

/// Everything known about D_alpha for one (potential, rho, alpha, n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminantReport {
    pub n: usize,
    pub alpha: f64,
    pub support: (f64, f64),
    pub omega_n: f64,
    pub c1: f64,
    /// Present for n >= 3.
    pub c2: Option<f64>,
    pub l2_ut: f64,
    pub l2_gradu: f64,
    pub upper_bound: f64,
    pub gauge_shift: f64,
    pub a_exact: f64,
    pub b_exact: f64,
    pub d_alpha: f64,
    pub a_error: f64,
    pub b_error: f64,
    pub d_error: f64,
    /// omega_n C1 alpha^{(4-n)/2} int u_t^2, valid for n >= 2.
    pub a_bound: Option<f64>,
    /// -(omega_n (n-2)/n) C2 alpha^{(2-n)/2} int |grad u|^2, for n >= 3.
    pub b_bound: Option<f64>,
    pub d_bound: Option<f64>,
}

impl DiscriminantReport {
    /// D_alpha < 0 by more than the quadrature error estimate.
    pub fn is_negative_beyond_error(&self) -> bool {
        self.d_alpha + self.d_error < 0.0
    }
}

/// D_alpha = A + B for the base cutoff `rho` stretched by `alpha`, with the
/// dimension-dependent upper bounds.
pub fn d_alpha(
    pot: &FourierPotential,
    rho: &CutoffFunction,
    alpha: f64,
    n: usize,
    grid: &PeriodicGrid,
) -> Result<DiscriminantReport, HopfError> {
    let rho_alpha = rho.stretch(alpha)?;
    let terms = reduced_terms(pot, &rho_alpha, n, grid)?;
    let m = pot.upper_bound()?;
    let omega = omega_n(n);
    let c1 = c1_constant(rho, n);
    let c2 = if n >= 3 {
        Some(c2_constant(rho, n, m)?)
    } else {
        None
    };
    let nf = n as f64;
    let (l2_ut, l2_gradu) = (pot.l2_ut(), pot.l2_gradu());
    let a_bound = (n >= 2).then(|| omega * c1 * alpha.powf((4.0 - nf) / 2.0) * l2_ut);
    let b_bound =
        c2.map(|c2| -omega * (nf - 2.0) / nf * c2 * alpha.powf((2.0 - nf) / 2.0) * l2_gradu);
    let d_bound = match (a_bound, b_bound) {
        (Some(a), Some(b)) => Some(a + b),
        _ => None,
    };
    Ok(DiscriminantReport {
        n,
        alpha,
        support: rho_alpha.support(),
        omega_n: omega,
        c1,
        c2,
        l2_ut,
        l2_gradu,
        upper_bound: m,
        gauge_shift: pot.gauge_shift(),
        a_exact: terms.a.value,
        b_exact: terms.b.value,
        d_alpha: terms.a.value + terms.b.value,
        a_error: terms.a.error,
        b_error: terms.b.error,
        d_error: terms.a.error + terms.b.error,
        a_bound,
        b_bound,
        d_bound,
    })
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McValue {
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub samples: usize,
    pub seed: u64,
    pub a: McValue,
    pub b: McValue,
    pub d: McValue,
}

#[derive(Default, Clone, Copy)]
struct Moments {
    a: f64,
    a2: f64,
    b: f64,
    b2: f64,
    d2: f64,
}

impl Moments {
    fn add(&mut self, fa: f64, fb: f64) {
        self.a += fa;
        self.a2 += fa * fa;
        self.b += fb;
        self.b2 += fb * fb;
        self.d2 += (fa + fb) * (fa + fb);
    }
}

fn mc_value(volume: f64, sum: f64, sum_sq: f64, n: usize) -> McValue {
    let nf = n as f64;
    let mean = sum / nf;
    let var = if n > 1 {
        ((sum_sq - sum * mean) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    McValue {
        estimate: volume * mean,
        std_error: volume * (var / nf).sqrt(),
    }
}

/// Direct Monte Carlo evaluation of both D_alpha integrals over
/// p in the annulus containing {a/alpha <= H <= b/alpha}, q in [0,1)^n and
/// t in [0,1). Sample i uses the random stream (seed, i).
pub fn d_alpha_direct_mc(
    pot: &FourierPotential,
    rho: &CutoffFunction,
    alpha: f64,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<McReport, HopfError> {
    let rho_alpha = rho.stretch(alpha)?;
    let (lifted, m) = prepare(pot, &rho_alpha, n)?;
    let (lo, hi) = rho_alpha.support();
    // H = |p|^2/2 + u with 0 <= u <= M.
    let r_lo = (2.0 * (lo - m)).max(0.0).sqrt();
    let r_hi = (2.0 * hi).sqrt();
    let nf = n as f64;
    let (r_lo_n, r_hi_n) = (r_lo.powi(n as i32), r_hi.powi(n as i32));
    let volume = omega_n(n) / nf * (r_hi_n - r_lo_n);
    let chunks = samples.div_ceil(MC_CHUNK);
    let partial: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Moments::default();
            let mut q = vec![0.0; n];
            let mut grad = vec![0.0; n];
            for i in c * MC_CHUNK..((c + 1) * MC_CHUNK).min(samples) {
                let mut rng = sample_rng(seed, i as u64);
                for x in q.iter_mut() {
                    *x = rng.random::<f64>();
                }
                let t = rng.random::<f64>();
                // The integrand sees p only through |p|, so the direction
                // is not drawn.
                let u01: f64 = rng.random();
                let r = (r_lo_n + u01 * (r_hi_n - r_lo_n)).powf(1.0 / nf);
                let h = 0.5 * r * r + lifted.eval(&q, t);
                let drho = rho_alpha.derivative(h);
                if drho == 0.0 {
                    acc.add(0.0, 0.0);
                    continue;
                }
                let ut = lifted.du_dt(&q, t);
                lifted.grad_q_into(&q, t, &mut grad);
                let g2: f64 = grad.iter().map(|x| x * x).sum();
                let fa = drho * drho * ut * ut;
                let fb = 2.0 * rho_alpha.value(h) * drho * g2 / nf;
                acc.add(fa, fb);
            }
            acc
        })
        .collect();
    let collect = |f: fn(&Moments) -> f64| pairwise_sum(&partial.iter().map(f).collect::<Vec<_>>());
    let (sa, sa2) = (collect(|m| m.a), collect(|m| m.a2));
    let (sb, sb2) = (collect(|m| m.b), collect(|m| m.b2));
    let sd2 = collect(|m| m.d2);
    Ok(McReport {
        samples,
        seed,
        a: mc_value(volume, sa, sa2, samples),
        b: mc_value(volume, sb, sb2, samples),
        d: mc_value(volume, sa + sb, sd2, samples),
    })
}

/// Per-alpha reports plus fitted log-log scaling exponents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub reports: Vec<DiscriminantReport>,
    /// alpha range used for the fits (the smallest decade of the sweep).
    pub fit_range: (f64, f64),
    pub slope_a: Option<f64>,
    pub slope_b: Option<f64>,
    /// Largest alpha with D_alpha < 0 beyond quadrature error.
    pub largest_negative_alpha: Option<f64>,
}

/// Log-log slopes of A_exact and |B_exact| against alpha over `reports`
/// restricted to `[lo, hi]`.
pub fn fitted_slopes(
    reports: &[DiscriminantReport],
    lo: f64,
    hi: f64,
) -> (Option<f64>, Option<f64>) {
    let sel: Vec<&DiscriminantReport> = reports
        .iter()
        .filter(|r| r.alpha >= lo * (1.0 - 1e-12) && r.alpha <= hi * (1.0 + 1e-12))
        .collect();
    let xs: Vec<f64> = sel.iter().map(|r| r.alpha).collect();
    let ya: Vec<f64> = sel.iter().map(|r| r.a_exact).collect();
    let yb: Vec<f64> = sel.iter().map(|r| r.b_exact.abs()).collect();
    (
        numerics::loglog_slope(&xs, &ya),
        numerics::loglog_slope(&xs, &yb),
    )
}

pub fn alpha_sweep(
    pot: &FourierPotential,
    rho: &CutoffFunction,
    n: usize,
    alphas: &[f64],
    grid: &PeriodicGrid,
) -> Result<SweepReport, HopfError> {
    let reports = alphas
        .iter()
        .map(|&a| d_alpha(pot, rho, a, n, grid))
        .collect::<Result<Vec<_>, _>>()?;
    let min_alpha = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    let fit_range = (min_alpha, 10.0 * min_alpha);
    let (slope_a, slope_b) = fitted_slopes(&reports, fit_range.0, fit_range.1);
    let largest_negative_alpha = reports
        .iter()
        .filter(|r| r.is_negative_beyond_error())
        .map(|r| r.alpha)
        .fold(None, |acc: Option<f64>, a| {
            Some(acc.map_or(a, |b| b.max(a)))
        });
    Ok(SweepReport {
        reports,
        fit_range,
        slope_a,
        slope_b,
        largest_negative_alpha,
    })
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (l0, l1) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| {
            if i == 0 {
                lo
            } else if i + 1 == count {
                hi
            } else {
                (l0 + (l1 - l0) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::FourierMode;
    use std::f64::consts::PI;

    /// Composite Simpson with a fixed, large panel count: an oracle
    /// independent of the Gauss machinery.
    fn simpson<F: Fn(f64) -> f64>(lo: f64, hi: f64, panels: usize, f: F) -> f64 {
        let h = (hi - lo) / panels as f64;
        let mut acc = f(lo) + f(hi);
        for i in 1..panels {
            let x = lo + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        acc * h / 3.0
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn bump_boundary_and_peak() {
        let rho = CutoffFunction::make_bump(2.0, 3.0).unwrap();
        assert_eq!(rho.value(2.0), 0.0);
        assert_eq!(rho.value(3.0), 0.0);
        assert_eq!(rho.derivative(2.0), 0.0);
        assert_eq!(rho.derivative(3.0), 0.0);
        assert!((rho.value(2.5) - 1.0).abs() < 1e-15);
        assert_eq!(rho.value(1.0), 0.0);
        assert_eq!(rho.value(4.0), 0.0);
        let total = simpson(2.0, 3.0, 2000, |x| rho.derivative(x));
        assert!(total.abs() < 1e-12);
        assert!(CutoffFunction::make_bump(3.0, 3.0).is_err());
        assert!(CutoffFunction::make_bump(-1.0, 3.0).is_err());
    }

    #[test]
    fn bump_derivatives_match_finite_differences() {
        let rho = CutoffFunction::make_bump(2.0, 3.5)
            .unwrap()
            .stretch(0.4)
            .unwrap();
        let (lo, hi) = rho.support();
        for i in 1..20 {
            let x = lo + (hi - lo) * i as f64 / 20.0;
            let h = 1e-6;
            let fd = (rho.value(x + h) - rho.value(x - h)) / (2.0 * h);
            assert!((fd - rho.derivative(x)).abs() < 1e-7);
            let fd2 = (rho.value(x + h).powi(2) - rho.value(x - h).powi(2)) / (2.0 * h);
            assert!((fd2 - rho.square_derivative(x)).abs() < 1e-7);
        }
    }

    #[test]
    fn stretch_scales_support_and_argument() {
        let rho = CutoffFunction::make_bump(2.0, 3.0).unwrap();
        let r = rho.stretch(0.25).unwrap();
        assert_eq!(r.support(), (8.0, 12.0));
        let half = rho.stretch(0.5).unwrap();
        for x0 in [2.1, 2.5, 2.93] {
            assert!((half.value(2.0 * x0) - rho.value(x0)).abs() < 1e-15);
            assert!((half.derivative(2.0 * x0) - 0.5 * rho.derivative(x0)).abs() < 1e-14);
        }
        assert!(rho.stretch(1.0).is_err());
        assert!(rho.stretch(0.0).is_err());
        // supp(rho) above R^2/2 + M stays above it after stretching
        let floor = 1.5;
        let base = CutoffFunction::default_for(1.0, 1.0).unwrap();
        assert!(base.support().0 > floor);
        for alpha in [0.9, 0.5, 1e-3] {
            assert!(base.stretch(alpha).unwrap().support().0 > floor);
        }
    }

    #[test]
    fn sphere_constants() {
        assert!((omega_n(2) - 2.0 * PI).abs() < 1e-14);
        assert!((omega_n(3) - 4.0 * PI).abs() < 1e-14);
        assert!((omega_n(4) - 2.0 * PI * PI).abs() < 1e-13);
    }

    #[test]
    fn c1_against_simpson_oracle() {
        let rho = CutoffFunction::make_bump(2.0, 3.0).unwrap();
        let oracle = simpson(2.0, 3.0, 20_000, |x| {
            rho.derivative(x).powi(2) * (2.0 * x).sqrt()
        });
        assert!(rel(c1_constant(&rho, 3), oracle) < 1e-10);
        let flat = simpson(2.0, 3.0, 20_000, |x| rho.derivative(x).powi(2));
        assert!(rel(c1_constant(&rho, 2), flat) < 1e-10);
        let c = 1.7;
        assert!(rel(c1_constant(&rho.scaled(c), 3), c * c * c1_constant(&rho, 3)) < 1e-13);
    }

    #[test]
    fn c2_cases() {
        let rho = CutoffFunction::make_bump(2.0, 3.0).unwrap();
        let oracle = simpson(2.0, 3.0, 20_000, |x| {
            rho.value(x).powi(2) / (2.0 * x).sqrt()
        });
        assert!(rel(c2_constant(&rho, 3, 0.0).unwrap(), oracle) < 1e-10);
        let c = 0.6;
        let c2_4 = c2_constant(&rho, 4, 0.0).unwrap();
        assert!(rel(c2_constant(&rho.scaled(c), 4, 0.0).unwrap(), c * c * c2_4) < 1e-13);
        let five = simpson(2.0, 3.0, 20_000, |x| {
            rho.value(x).powi(2) * (2.0 * x).sqrt()
        });
        assert!(rel(c2_constant(&rho, 5, 0.0).unwrap(), five) < 1e-10);
        assert!(c2_constant(&rho, 6, 0.7).unwrap() > 0.0);
        assert_eq!(
            c2_constant(&rho, 2, 0.0),
            Err(HopfError::UnsupportedDimension(2))
        );
        assert!(matches!(
            c2_constant(&rho, 5, 2.5),
            Err(HopfError::SupportTooLow { .. })
        ));
    }

    fn spatial_mode(n: usize, m: i64) -> FourierPotential {
        let mut k = vec![0; n];
        k[0] = 1;
        FourierPotential::new(n, vec![FourierMode::new(k, m, 0.4, 0.3)], 0.0)
            .unwrap()
            .normalize()
    }

    #[test]
    fn constant_potential_gives_zero() {
        let pot = FourierPotential::zero(3).unwrap().normalize();
        let rho = CutoffFunction::default_for(1.0, 0.0).unwrap();
        let grid = default_grid(&pot, 3).unwrap();
        for alpha in [0.5, 0.05] {
            let rep = d_alpha(&pot, &rho, alpha, 3, &grid).unwrap();
            assert_eq!(rep.a_exact, 0.0);
            assert_eq!(rep.b_exact, 0.0);
            assert_eq!(rep.d_alpha, 0.0);
        }
        let mc = d_alpha_direct_mc(&pot, &rho, 0.5, 3, 1000, 1).unwrap();
        assert_eq!(mc.d.estimate, 0.0);
    }

    #[test]
    fn autonomous_potential_has_vanishing_a() {
        let pot = spatial_mode(3, 0);
        let rho = CutoffFunction::default_for(1.0, pot.upper_bound().unwrap()).unwrap();
        let grid = default_grid(&pot, 3).unwrap();
        let rep = d_alpha(&pot, &rho, 0.3, 3, &grid).unwrap();
        assert_eq!(rep.a_exact, 0.0);
        assert!(rep.b_exact < 0.0);
        assert_eq!(rep.d_alpha, rep.b_exact);
        assert!(rep.is_negative_beyond_error());
    }

    #[test]
    fn two_dimensional_b_vanishes() {
        let pot = spatial_mode(2, 1);
        let rho = CutoffFunction::default_for(1.0, pot.upper_bound().unwrap()).unwrap();
        let grid = default_grid(&pot, 2).unwrap();
        let rho_a = rho.stretch(0.2).unwrap();
        assert_eq!(term_b_exact(&pot, &rho_a, 2, &grid).unwrap().value, 0.0);
        // A is exact for n = 2: the weight is identically 1
        let rep = d_alpha(&pot, &rho, 0.2, 2, &grid).unwrap();
        assert!(rel(rep.a_exact, rep.a_bound.unwrap()) < 1e-10);
        assert!(rep.b_bound.is_none());
    }

    #[test]
    fn bounds_hold_and_a_ratio_tends_to_one() {
        let pot = spatial_mode(3, 1);
        let m = pot.upper_bound().unwrap();
        let rho = CutoffFunction::default_for(1.0, m).unwrap();
        let grid = default_grid(&pot, 3).unwrap();
        let mut last_ratio = 0.0;
        for alpha in [0.5, 0.1, 0.01, 0.001] {
            let rep = d_alpha(&pot, &rho, alpha, 3, &grid).unwrap();
            assert!(rep.a_exact >= 0.0);
            assert!(rep.a_exact <= rep.a_bound.unwrap() + rep.a_error);
            assert!(rep.b_exact <= rep.b_bound.unwrap() + rep.b_error);
            let ratio = rep.a_exact / rep.a_bound.unwrap();
            assert!(ratio > last_ratio);
            last_ratio = ratio;
        }
        assert!(last_ratio > 0.999);
    }

    #[test]
    fn four_dimensional_b_equals_its_bound() {
        let pot = spatial_mode(4, 1);
        let rho = CutoffFunction::default_for(1.0, pot.upper_bound().unwrap()).unwrap();
        let grid = default_grid(&pot, 4).unwrap();
        let rep = d_alpha(&pot, &rho, 0.1, 4, &grid).unwrap();
        assert!(rel(rep.b_exact, rep.b_bound.unwrap()) < 1e-10);
    }

    #[test]
    fn support_too_low_is_rejected() {
        let pot = spatial_mode(3, 0);
        let rho = CutoffFunction::make_bump(0.1, 0.5)
            .unwrap()
            .stretch(0.9)
            .unwrap();
        let grid = default_grid(&pot, 3).unwrap();
        assert!(matches!(
            term_a_exact(&pot, &rho, 3, &grid),
            Err(HopfError::SupportTooLow { .. })
        ));
        let raw = FourierPotential::new(3, pot.modes().to_vec(), 0.0).unwrap();
        assert!(matches!(
            term_a_exact(&raw, &rho, 3, &grid),
            Err(HopfError::Potential(PotentialError::NotNormalized))
        ));
    }

    #[test]
    fn mc_standard_error_halves_with_four_times_the_samples() {
        let pot = spatial_mode(3, 1);
        let rho = CutoffFunction::default_for(1.0, pot.upper_bound().unwrap()).unwrap();
        let small = d_alpha_direct_mc(&pot, &rho, 0.5, 3, 20_000, 9).unwrap();
        let large = d_alpha_direct_mc(&pot, &rho, 0.5, 3, 40_000, 9).unwrap();
        let ratio = large.d.std_error / small.d.std_error;
        assert!(
            (ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.2 * std::f64::consts::FRAC_1_SQRT_2
        );
    }

    #[test]
    fn log_spacing_hits_endpoints() {
        let a = log_spaced(1e-3, 1e-1, 16);
        assert_eq!(a.len(), 16);
        assert_eq!(a[0], 1e-3);
        assert_eq!(a[15], 1e-1);
        assert!(a.windows(2).all(|w| w[1] > w[0]));
    }
}
