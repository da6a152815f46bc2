//! Jacobi fields along orbits, conjugate-point detection and Riccati
//! diagnostics.
//!
//! The Jacobi matrix solves J'' = -Hess_q u(q(t), t) J with the focal data
//! J(t0) = 0, J'(t0) = I, discretized by the tangent map of the same
//! kick-drift-kick scheme that produced the orbit. Conjugate points are the
//! zeros of det J after t0. The Riccati matrix A = J' J^{-1} is never
//! integrated directly; it is read off the Jacobi fields.
//!
//! When the fields grow large the pair (J, J') is replaced by an
//! orthonormal frame (J G, J' G) with det G > 0. This keeps the columns well
//! conditioned, preserves the sign of det J and leaves A unchanged; the
//! discarded positive factor is kept as `log_scale`.

use crate::dynamics::{self, verlet_kernel, DynamicsError, OrbitSegment, PhaseState};
use crate::potential::Potential;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

/// Relative threshold for "near-singular" Jacobi determinants.
pub const SIGMA_SINGULAR: f64 = 1e-10;
/// Detection is suppressed for this many steps after t0.
pub const GUARD_STEPS: f64 = 10.0;
/// Bisection tolerance on the conjugate time.
pub const BISECTION_TOL: f64 = 1e-8;
/// Entry size above which the Jacobi frame is re-orthonormalized.
const RENORMALIZE_ABOVE: f64 = 1e3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConjugateError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("Jacobi matrix is near-singular at t = {time}")]
    SingularWindow { time: f64 },
    #[error("orbit segment is empty")]
    EmptyOrbit,
    #[error("diagnostic window [{0}, {1}] contains no interior samples")]
    EmptyWindow(f64, f64),
}

/// Jacobi matrices sampled along one orbit.
#[derive(Debug, Clone)]
pub struct JacobiRecord {
    pub orbit: OrbitSegment,
    pub j: Vec<DMatrix<f64>>,
    pub jdot: Vec<DMatrix<f64>>,
    /// det of the stored frame `j[k]`.
    pub det_frame: Vec<f64>,
    /// ln of the positive factor relating the frame to the true Jacobi matrix.
    pub log_scale: Vec<f64>,
}

impl JacobiRecord {
    pub fn len(&self) -> usize {
        self.j.len()
    }

    pub fn is_empty(&self) -> bool {
        self.j.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.orbit.states.iter().map(|s| s.t)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.orbit.states[k].t
    }

    pub fn step(&self) -> f64 {
        self.orbit.step
    }

    /// det J(t_k) of the true (unnormalized) Jacobi matrix. May overflow to
    /// infinity on strongly hyperbolic orbits; the sign is always exact.
    pub fn det_j(&self, k: usize) -> f64 {
        self.det_frame[k] * self.log_scale[k].exp()
    }

    /// ln |det J(t_k)|.
    pub fn log_abs_det(&self, k: usize) -> f64 {
        self.det_frame[k].abs().ln() + self.log_scale[k]
    }

    /// J^T J' - J'^T J at sample k (identically zero for focal data).
    pub fn wronskian(&self, k: usize) -> DMatrix<f64> {
        self.j[k].transpose() * &self.jdot[k] - self.jdot[k].transpose() * &self.j[k]
    }

    /// A = J' J^{-1}, or `None` when J is exactly singular.
    pub fn riccati_matrix(&self, k: usize) -> Option<DMatrix<f64>> {
        // A J = J'  <=>  J^T A^T = J'^T
        let lu = self.j[k].transpose().lu();
        lu.solve(&self.jdot[k].transpose()).map(|at| at.transpose())
    }

    /// Whether sample k is near-singular relative to the largest |det J|
    /// seen up to and including k.
    fn singular_flags(&self) -> Vec<bool> {
        let ln_sigma = SIGMA_SINGULAR.ln();
        let mut run_max = f64::NEG_INFINITY;
        (0..self.len())
            .map(|k| {
                let l = self.log_abs_det(k);
                if l.is_finite() {
                    run_max = run_max.max(l);
                }
                !(l.is_finite() && l >= ln_sigma + run_max)
            })
            .collect()
    }

    /// CSV with columns `t, detJ, traceA, matrix_residual`; `traceA` is blank
    /// where J is near-singular and `matrix_residual` where it is unavailable.
    pub fn write_csv<P: Potential + ?Sized, W: Write>(
        &self,
        pot: &P,
        mut out: W,
    ) -> std::io::Result<()> {
        writeln!(out, "t,detJ,traceA,matrix_residual")?;
        let singular = self.singular_flags();
        let h = self.step();
        let n = self.orbit.first().dim();
        let mut hess = DMatrix::zeros(n, n);
        let a: Vec<Option<DMatrix<f64>>> = (0..self.len())
            .map(|k| {
                if singular[k] {
                    None
                } else {
                    self.riccati_matrix(k)
                }
            })
            .collect();
        for k in 0..self.len() {
            let t = self.time(k);
            let trace = a[k]
                .as_ref()
                .map(|m| format!("{:e}", m.trace()))
                .unwrap_or_default();
            let residual = if k > 0 && k + 1 < self.len() {
                match (&a[k - 1], &a[k], &a[k + 1]) {
                    (Some(am), Some(ak), Some(ap)) => {
                        let s = &self.orbit.states[k];
                        pot.hess_q_into(&s.q, s.t, &mut hess);
                        let r = (ap - am) / (2.0 * h) + ak * ak + &hess;
                        format!("{:e}", r.norm())
                    }
                    _ => String::new(),
                }
            } else {
                String::new()
            };
            writeln!(out, "{:e},{:e},{},{}", t, self.det_j(k), trace, residual)?;
        }
        Ok(())
    }
}

/// Tangent-map step: J' -= h/2 H_k J; J += h J'; J' -= h/2 H_{k+1} J.
#[inline]
fn jacobi_step(
    j: &mut DMatrix<f64>,
    jdot: &mut DMatrix<f64>,
    h: f64,
    hess_now: &DMatrix<f64>,
    hess_next: &DMatrix<f64>,
) {
    jdot.gemm(-0.5 * h, hess_now, j, 1.0);
    j.zip_apply(jdot, |a, b| *a += h * b);
    jdot.gemm(-0.5 * h, hess_next, j, 1.0);
}

/// Re-orthonormalizes the frame when it has grown large. Returns the ln of
/// the positive determinant that was divided out (0 when untouched).
fn renormalize(j: &mut DMatrix<f64>, jdot: &mut DMatrix<f64>) -> f64 {
    if j.amax().max(jdot.amax()) <= RENORMALIZE_ABOVE {
        return 0.0;
    }
    let n = j.nrows();
    let mut stacked = DMatrix::zeros(2 * n, n);
    stacked.rows_mut(0, n).copy_from(j);
    stacked.rows_mut(n, n).copy_from(jdot);
    let qr = stacked.qr();
    let mut q = qr.q();
    let r = qr.r();
    let mut log_det = 0.0;
    for i in 0..n {
        let rii = r[(i, i)];
        if rii < 0.0 {
            q.column_mut(i).neg_mut();
        }
        log_det += rii.abs().ln();
    }
    j.copy_from(&q.rows(0, n));
    jdot.copy_from(&q.rows(n, n));
    log_det
}

/// Orbit and Jacobi frame advanced together, one step at a time.
pub(crate) struct JacobiFlow<'a, P: Potential + ?Sized> {
    pot: &'a P,
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    t0: f64,
    t: f64,
    h: f64,
    k: usize,
    j: DMatrix<f64>,
    jdot: DMatrix<f64>,
    hess: DMatrix<f64>,
    hess_next: DMatrix<f64>,
    log_scale: f64,
}

impl<'a, P: Potential + ?Sized> JacobiFlow<'a, P> {
    fn focal(pot: &'a P, start: &PhaseState, h: f64) -> Self {
        let n = start.dim();
        Self::from_parts(
            pot,
            start,
            DMatrix::zeros(n, n),
            DMatrix::identity(n, n),
            0.0,
            h,
        )
    }

    fn from_parts(
        pot: &'a P,
        state: &PhaseState,
        j: DMatrix<f64>,
        jdot: DMatrix<f64>,
        log_scale: f64,
        h: f64,
    ) -> Self {
        let n = state.dim();
        let mut grad = vec![0.0; n];
        pot.grad_q_into(&state.q, state.t, &mut grad);
        let mut hess = DMatrix::zeros(n, n);
        pot.hess_q_into(&state.q, state.t, &mut hess);
        Self {
            pot,
            q: state.q.clone(),
            p: state.p.clone(),
            grad,
            t0: state.t,
            t: state.t,
            h,
            k: 0,
            j,
            jdot,
            hess,
            hess_next: DMatrix::zeros(n, n),
            log_scale,
        }
    }

    fn advance(&mut self) -> Result<(), DynamicsError> {
        let t_next = self.t0 + (self.k + 1) as f64 * self.h;
        self.step_to(self.h, t_next);
        if !(self.q.iter().chain(&self.p).all(|x| x.is_finite())) {
            return Err(DynamicsError::Diverged {
                last_valid_time: self.t0 + self.k as f64 * self.h,
            });
        }
        self.k += 1;
        self.t = t_next;
        Ok(())
    }

    fn step_to(&mut self, h: f64, t_next: f64) {
        verlet_kernel(
            self.pot,
            &mut self.q,
            &mut self.p,
            &mut self.grad,
            h,
            t_next,
        );
        self.pot.hess_q_into(&self.q, t_next, &mut self.hess_next);
        jacobi_step(&mut self.j, &mut self.jdot, h, &self.hess, &self.hess_next);
        std::mem::swap(&mut self.hess, &mut self.hess_next);
        self.log_scale += renormalize(&mut self.j, &mut self.jdot);
    }

    fn det_frame(&self) -> f64 {
        self.j.determinant()
    }

    /// det of the frame after a single step of size `s` from the current
    /// point (used for bisection inside one step).
    fn det_after_partial(&self, s: f64) -> f64 {
        let mut q = self.q.clone();
        let mut p = self.p.clone();
        let mut grad = self.grad.clone();
        let mut j = self.j.clone();
        let mut jdot = self.jdot.clone();
        let mut hess_next = self.hess_next.clone();
        let t_next = self.t + s;
        verlet_kernel(self.pot, &mut q, &mut p, &mut grad, s, t_next);
        self.pot.hess_q_into(&q, t_next, &mut hess_next);
        jacobi_step(&mut j, &mut jdot, s, &self.hess, &hess_next);
        j.determinant()
    }

    /// Bisects the sign change of det J inside the step that ends at the
    /// current point, stepping backward (the scheme is time-reversible).
    fn bisect_zero(&self) -> f64 {
        let sign_here = self.det_frame().signum();
        let (mut lo, mut hi) = (0.0, self.h);
        while hi - lo > BISECTION_TOL {
            let mid = 0.5 * (lo + hi);
            let d = self.det_after_partial(-mid);
            if d == 0.0 {
                return self.t - mid;
            }
            if d.signum() == sign_here {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.t - 0.5 * (lo + hi)
    }

    /// Golden-section search for the minimum of ln |det J| over the last
    /// two steps, stepping backward from the current point. Returns the
    /// backward offset and the frame's ln |det| there.
    fn refine_minimum(&self) -> (f64, f64) {
        const INV_PHI: f64 = 0.618_033_988_749_895;
        let f = |s: f64| self.det_after_partial(-s).abs().ln();
        let (mut lo, mut hi) = (0.0, 2.0 * self.h);
        let mut x1 = hi - INV_PHI * (hi - lo);
        let mut x2 = lo + INV_PHI * (hi - lo);
        let (mut f1, mut f2) = (f(x1), f(x2));
        while hi - lo > BISECTION_TOL {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - INV_PHI * (hi - lo);
                f1 = f(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + INV_PHI * (hi - lo);
                f2 = f(x2);
            }
        }
        if f1 <= f2 {
            (x1, f1)
        } else {
            (x2, f2)
        }
    }
}

/// How a conjugate point was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConjugateKind {
    /// det J changes sign (refined by bisection).
    SignChange,
    /// det J hit exactly zero on a sample.
    ExactZero,
    /// |det J| has a local minimum below the singular threshold without a
    /// sign change (even-multiplicity touch).
    SuspectedTangential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugatePoint {
    pub time: f64,
    pub kind: ConjugateKind,
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    det: f64,
    log_abs: f64,
    active: bool,
}

enum Detection {
    /// Sign change between the previous sample and the current one.
    SignChange,
    ExactZero,
    /// |det J| has a sampled local minimum at the previous sample; the true
    /// minimum lies within the last two steps.
    LocalMinimum,
}

/// Sequential detector over (t_k, det J(t_k)) samples.
struct ConjugateScanner {
    guard_end: f64,
    ln_sigma: f64,
    run_max: f64,
    prev: Option<Sample>,
    prev2: Option<Sample>,
}

impl ConjugateScanner {
    fn new(t0: f64, h: f64) -> Self {
        Self {
            guard_end: t0 + GUARD_STEPS * h,
            ln_sigma: SIGMA_SINGULAR.ln(),
            run_max: f64::NEG_INFINITY,
            prev: None,
            prev2: None,
        }
    }

    fn push(&mut self, t: f64, det: f64, log_scale: f64) -> Option<Detection> {
        let log_abs = det.abs().ln() + log_scale;
        if log_abs.is_finite() {
            self.run_max = self.run_max.max(log_abs);
        }
        let cur = Sample {
            det,
            log_abs,
            active: t > self.guard_end * (1.0 + 1e-15),
        };
        let mut found = None;
        if cur.active {
            if det == 0.0 {
                found = Some(Detection::ExactZero);
            } else if let Some(prev) = self.prev.filter(|p| p.active) {
                if prev.det.signum() != det.signum() {
                    found = Some(Detection::SignChange);
                } else if let Some(prev2) = self.prev2.filter(|p| p.active) {
                    if prev.log_abs <= prev2.log_abs && prev.log_abs <= cur.log_abs {
                        found = Some(Detection::LocalMinimum);
                    }
                }
            }
        }
        self.prev2 = self.prev;
        self.prev = Some(cur);
        found
    }

    /// Turns a detection into a conjugate point, using `flow` positioned at
    /// the sample that triggered it. Local minima are refined between
    /// samples and kept only if they fall below the singular threshold.
    fn resolve<P: Potential + ?Sized>(
        &self,
        detection: Detection,
        flow: &JacobiFlow<'_, P>,
    ) -> Option<ConjugatePoint> {
        match detection {
            Detection::ExactZero => Some(ConjugatePoint {
                time: flow.t,
                kind: ConjugateKind::ExactZero,
            }),
            Detection::SignChange => Some(ConjugatePoint {
                time: flow.bisect_zero(),
                kind: ConjugateKind::SignChange,
            }),
            Detection::LocalMinimum => {
                let (back, log_min) = flow.refine_minimum();
                (log_min + flow.log_scale < self.ln_sigma + self.run_max).then_some(
                    ConjugatePoint {
                        time: flow.t - back,
                        kind: ConjugateKind::SuspectedTangential,
                    },
                )
            }
        }
    }
}

/// Propagates the focal Jacobi matrix along `orbit`, using the orbit's own
/// step and the Hessian at each recorded state.
pub fn propagate_jacobi<P: Potential + ?Sized>(
    pot: &P,
    orbit: &OrbitSegment,
) -> Result<JacobiRecord, ConjugateError> {
    if orbit.is_empty() {
        return Err(ConjugateError::EmptyOrbit);
    }
    let n = orbit.first().dim();
    let h = orbit.step;
    let mut j = DMatrix::zeros(n, n);
    let mut jdot = DMatrix::identity(n, n);
    let mut hess = pot.hess_q(&orbit.first().q, orbit.first().t);
    let mut hess_next = DMatrix::zeros(n, n);
    let mut log_scale = 0.0;
    let mut rec = JacobiRecord {
        orbit: orbit.clone(),
        j: Vec::with_capacity(orbit.len()),
        jdot: Vec::with_capacity(orbit.len()),
        det_frame: Vec::with_capacity(orbit.len()),
        log_scale: Vec::with_capacity(orbit.len()),
    };
    rec.j.push(j.clone());
    rec.jdot.push(jdot.clone());
    rec.det_frame.push(0.0);
    rec.log_scale.push(0.0);
    for s in &orbit.states[1..] {
        pot.hess_q_into(&s.q, s.t, &mut hess_next);
        jacobi_step(&mut j, &mut jdot, h, &hess, &hess_next);
        std::mem::swap(&mut hess, &mut hess_next);
        log_scale += renormalize(&mut j, &mut jdot);
        rec.det_frame.push(j.determinant());
        rec.log_scale.push(log_scale);
        rec.j.push(j.clone());
        rec.jdot.push(jdot.clone());
    }
    Ok(rec)
}

/// First conjugate time after the guard interval, or `None` if det J keeps
/// its sign and stays away from zero over the whole record.
pub fn first_conjugate_time<P: Potential + ?Sized>(
    pot: &P,
    record: &JacobiRecord,
) -> Option<ConjugatePoint> {
    if record.is_empty() {
        return None;
    }
    let h = record.step();
    let mut scanner = ConjugateScanner::new(record.time(0), h);
    for k in 0..record.len() {
        if let Some(detection) =
            scanner.push(record.time(k), record.det_frame[k], record.log_scale[k])
        {
            let flow = JacobiFlow::from_parts(
                pot,
                &record.orbit.states[k],
                record.j[k].clone(),
                record.jdot[k].clone(),
                record.log_scale[k],
                h,
            );
            if let Some(point) = scanner.resolve(detection, &flow) {
                return Some(point);
            }
        }
    }
    None
}

/// Integrates the orbit and its Jacobi fields together and stops at the
/// first conjugate point in (t0, t0 + horizon]. No samples are stored.
pub fn scan_conjugate<P: Potential + ?Sized>(
    pot: &P,
    start: &PhaseState,
    horizon: f64,
    h: f64,
) -> Result<Option<ConjugatePoint>, ConjugateError> {
    dynamics::check_step_args(horizon, h)?;
    let steps = dynamics::step_count(horizon, h);
    let mut flow = JacobiFlow::focal(pot, start, h);
    let mut scanner = ConjugateScanner::new(start.t, h);
    scanner.push(start.t, 0.0, 0.0);
    for _ in 0..steps {
        flow.advance()?;
        if let Some(detection) = scanner.push(flow.t, flow.det_frame(), flow.log_scale) {
            if let Some(point) = scanner.resolve(detection, &flow) {
                return Ok(Some(point));
            }
        }
    }
    Ok(None)
}

/// True iff no conjugate point is found on [t0, t0 + horizon]. A finite
/// horizon certifies only "none found up to horizon".
pub fn is_minimal<P: Potential + ?Sized>(
    pot: &P,
    start: &PhaseState,
    horizon: f64,
    h: f64,
) -> Result<bool, ConjugateError> {
    Ok(scan_conjugate(pot, start, horizon, h)?.is_none())
}

/// Per-sample Riccati diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSample {
    pub t: f64,
    pub a: DMatrix<f64>,
    /// a = Tr A.
    pub trace: f64,
    /// Frobenius norm of dA/dt + A^2 + Hess u (centered differences).
    pub matrix_residual: f64,
    /// da/dt + a^2/n + Laplacian u; non-positive up to discretization error.
    pub trace_residual: f64,
    /// Tr A^2 - (Tr A)^2 / n.
    pub trace_gap: f64,
    /// Frobenius norm of A - A^T.
    pub asymmetry: f64,
}

impl RiccatiSample {
    /// Trace inequality Tr A^2 >= (Tr A)^2 / n, checked only where A is
    /// symmetric to 1e-6 relative. `None` when A is not symmetric enough.
    pub fn trace_inequality_holds(&self) -> Option<bool> {
        let norm = self.a.norm();
        if self.asymmetry < 1e-6 * norm.max(f64::MIN_POSITIVE) {
            Some(self.trace_gap >= -1e-8 * (1.0 + norm * norm))
        } else {
            None
        }
    }
}

/// Riccati diagnostics on the interior samples with t in `[t_a, t_b]`.
pub fn riccati_diagnostics<P: Potential + ?Sized>(
    pot: &P,
    record: &JacobiRecord,
    window: (f64, f64),
) -> Result<Vec<RiccatiSample>, ConjugateError> {
    let (t_a, t_b) = window;
    let h = record.step();
    let singular = record.singular_flags();
    let ks: Vec<usize> = (1..record.len().saturating_sub(1))
        .filter(|&k| {
            let t = record.time(k);
            t >= t_a && t <= t_b
        })
        .collect();
    if ks.is_empty() {
        return Err(ConjugateError::EmptyWindow(t_a, t_b));
    }
    let a_at = |k: usize| -> Result<DMatrix<f64>, ConjugateError> {
        let err = ConjugateError::SingularWindow {
            time: record.time(k),
        };
        if singular[k] {
            return Err(err);
        }
        record.riccati_matrix(k).ok_or(err)
    };
    let n = record.orbit.first().dim();
    let nf = n as f64;
    let mut hess = DMatrix::zeros(n, n);
    let mut out = Vec::with_capacity(ks.len());
    let mut cache: Option<(usize, DMatrix<f64>, DMatrix<f64>)> = None;
    for &k in &ks {
        let (am, ak) = match cache.take() {
            Some((ck, a_prev, a_cur)) if ck + 1 == k => (a_prev, a_cur),
            _ => (a_at(k - 1)?, a_at(k)?),
        };
        let ap = a_at(k + 1)?;
        let s = &record.orbit.states[k];
        pot.hess_q_into(&s.q, s.t, &mut hess);
        let a2 = &ak * &ak;
        let dadt = (&ap - &am) / (2.0 * h);
        let matrix_residual = (&dadt + &a2 + &hess).norm();
        let trace = ak.trace();
        let trace_rate = (ap.trace() - am.trace()) / (2.0 * h);
        let trace_residual = trace_rate + trace * trace / nf + pot.laplacian(&s.q, s.t);
        out.push(RiccatiSample {
            t: s.t,
            trace,
            matrix_residual,
            trace_residual,
            trace_gap: a2.trace() - trace * trace / nf,
            asymmetry: (&ak - ak.transpose()).norm(),
            a: ak.clone(),
        });
        cache = Some((k, ak, ap));
    }
    Ok(out)
}
