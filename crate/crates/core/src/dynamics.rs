//! Hamiltonian flow of H = |p|^2/2 + u(q, t) by Störmer–Verlet
//! (kick-drift-kick), orbit segments, and the time-rescaling map between
//! orbits of H and H_eps = |p|^2/2 + eps^2 u(q, eps t).

use crate::potential::Potential;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("integration diverged after t = {last_valid_time}")]
    Diverged { last_valid_time: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Point (q, p, t) of extended phase space. `q` is an unwrapped lift in R^n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub t: f64,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>, t: f64) -> Self {
        assert_eq!(q.len(), p.len(), "q and p must have the same dimension");
        Self { q, p, t }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn momentum_norm(&self) -> f64 {
        self.p.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.q.iter().chain(&self.p).all(|x| x.is_finite())
    }

    fn distance(&self, other: &Self) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .chain(self.p.iter().zip(&other.p))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Equally spaced samples of one orbit; `states[k].t = states[0].t + k * step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSegment {
    pub states: Vec<PhaseState>,
    pub step: f64,
}

impl OrbitSegment {
    pub fn first(&self) -> &PhaseState {
        &self.states[0]
    }

    pub fn last(&self) -> &PhaseState {
        &self.states[self.states.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.last().t - self.first().t
    }

    /// Largest componentwise |p|, |q| difference between matching samples.
    pub fn max_deviation(&self, other: &OrbitSegment) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| a.distance(b))
            .fold(0.0, f64::max)
    }

    /// Largest |H(state) - H(first)| along the segment.
    pub fn energy_drift<P: Potential + ?Sized>(&self, pot: &P) -> f64 {
        let h0 = energy(pot, self.first());
        self.states
            .iter()
            .map(|s| (energy(pot, s) - h0).abs())
            .fold(0.0, f64::max)
    }

    /// CSV with columns `t, q_1..q_n, p_1..p_n, H`.
    pub fn write_csv<P: Potential + ?Sized, W: Write>(
        &self,
        pot: &P,
        mut out: W,
    ) -> std::io::Result<()> {
        let n = self.first().dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("q_{i}")));
        header.extend((1..=n).map(|i| format!("p_{i}")));
        header.push("H".into());
        writeln!(out, "{}", header.join(","))?;
        for s in &self.states {
            let mut row = vec![format!("{:e}", s.t)];
            row.extend(s.q.iter().chain(&s.p).map(|x| format!("{x:e}")));
            row.push(format!("{:e}", energy(pot, s)));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// How the integration step is chosen for an initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepPolicy {
    /// `base / max(1, |p|)`: uniform spatial resolution across energy shells.
    Scaled {
        base: f64,
    },
    Fixed {
        step: f64,
    },
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy::Scaled { base: 1e-3 }
    }
}

impl StepPolicy {
    pub fn step_for(&self, state: &PhaseState) -> f64 {
        match *self {
            StepPolicy::Scaled { base } => base / state.momentum_norm().max(1.0),
            StepPolicy::Fixed { step } => step,
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let h = match *self {
            StepPolicy::Scaled { base } => base,
            StepPolicy::Fixed { step } => step,
        };
        if h > 0.0 && h.is_finite() {
            Ok(())
        } else {
            Err(DynamicsError::InvalidParameter(format!(
                "integration step must be positive, got {h}"
            )))
        }
    }
}

/// One kick-drift-kick step in place. On entry `grad` holds grad_q u(q, t);
/// on exit it holds grad_q u(q', t_next).
#[inline]
pub(crate) fn verlet_kernel<P: Potential + ?Sized>(
    pot: &P,
    q: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    h: f64,
    t_next: f64,
) {
    let half = 0.5 * h;
    for (pi, gi) in p.iter_mut().zip(grad.iter()) {
        *pi -= half * gi;
    }
    for (qi, pi) in q.iter_mut().zip(p.iter()) {
        *qi += h * pi;
    }
    pot.grad_q_into(q, t_next, grad);
    for (pi, gi) in p.iter_mut().zip(grad.iter()) {
        *pi -= half * gi;
    }
}

/// One Störmer–Verlet step of size `h`.
pub fn step_vv<P: Potential + ?Sized>(pot: &P, state: &PhaseState, h: f64) -> PhaseState {
    let mut q = state.q.clone();
    let mut p = state.p.clone();
    let mut grad = vec![0.0; q.len()];
    pot.grad_q_into(&q, state.t, &mut grad);
    let t_next = state.t + h;
    verlet_kernel(pot, &mut q, &mut p, &mut grad, h, t_next);
    PhaseState { q, p, t: t_next }
}

/// Number of steps of size `h` covering `duration` (ceil, tolerant of rounding).
pub(crate) fn step_count(duration: f64, h: f64) -> usize {
    let ratio = duration / h;
    let rounded = ratio.round();
    if (ratio - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        rounded as usize
    } else {
        ratio.ceil() as usize
    }
}

pub(crate) fn check_step_args(duration: f64, h: f64) -> Result<(), DynamicsError> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(DynamicsError::InvalidParameter(format!(
            "duration must be positive, got {duration}"
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(DynamicsError::InvalidParameter(format!(
            "step must be positive, got {h}"
        )));
    }
    Ok(())
}

/// Integrates the flow of H from `start` over `duration` with fixed step `h`.
pub fn integrate<P: Potential + ?Sized>(
    pot: &P,
    start: &PhaseState,
    duration: f64,
    h: f64,
) -> Result<OrbitSegment, DynamicsError> {
    check_step_args(duration, h)?;
    let steps = step_count(duration, h);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(start.clone());
    let mut q = start.q.clone();
    let mut p = start.p.clone();
    let mut grad = vec![0.0; q.len()];
    pot.grad_q_into(&q, start.t, &mut grad);
    for k in 0..steps {
        let t_next = start.t + (k + 1) as f64 * h;
        verlet_kernel(pot, &mut q, &mut p, &mut grad, h, t_next);
        let state = PhaseState {
            q: q.clone(),
            p: p.clone(),
            t: t_next,
        };
        if !state.is_finite() {
            return Err(DynamicsError::Diverged {
                last_valid_time: states[states.len() - 1].t,
            });
        }
        states.push(state);
    }
    Ok(OrbitSegment { states, step: h })
}

/// Time-1 map of the flow (one period of the potential).
pub fn time_one_map<P: Potential + ?Sized>(
    pot: &P,
    state: &PhaseState,
    h: f64,
) -> Result<PhaseState, DynamicsError> {
    Ok(integrate(pot, state, 1.0, h)?.last().clone())
}

/// H(p, q, t) = |p|^2 / 2 + u(q, t).
pub fn energy<P: Potential + ?Sized>(pot: &P, state: &PhaseState) -> f64 {
    0.5 * state.p.iter().map(|x| x * x).sum::<f64>() + pot.eval(&state.q, state.t)
}

/// eps^2 u(q, eps t): the potential of H_eps.
#[derive(Debug, Clone, Copy)]
pub struct Rescaled<'a, P: ?Sized> {
    pub base: &'a P,
    pub eps: f64,
}

impl<'a, P: Potential + ?Sized> Rescaled<'a, P> {
    pub fn new(base: &'a P, eps: f64) -> Self {
        Self { base, eps }
    }
}

impl<P: Potential + ?Sized> Potential for Rescaled<'_, P> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn eval(&self, q: &[f64], t: f64) -> f64 {
        self.eps * self.eps * self.base.eval(q, self.eps * t)
    }
    fn grad_q_into(&self, q: &[f64], t: f64, out: &mut [f64]) {
        self.base.grad_q_into(q, self.eps * t, out);
        let e2 = self.eps * self.eps;
        out.iter_mut().for_each(|x| *x *= e2);
    }
    fn hess_q_into(&self, q: &[f64], t: f64, out: &mut DMatrix<f64>) {
        self.base.hess_q_into(q, self.eps * t, out);
        *out *= self.eps * self.eps;
    }
    fn du_dt(&self, q: &[f64], t: f64) -> f64 {
        self.eps.powi(3) * self.base.du_dt(q, self.eps * t)
    }
}

/// Maps an orbit (p(t), q(t)) of H to (eps p(eps s), q(eps s)), an orbit of
/// H_eps sampled at s = t / eps. Pure coordinate transform.
///
/// Any eps > 0 is accepted so the inverse map (1/eps) can be applied to an
/// orbit of H_eps.
pub fn rescale_orbit(orbit: &OrbitSegment, eps: f64) -> Result<OrbitSegment, DynamicsError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(DynamicsError::InvalidParameter(format!(
            "rescaling factor must be positive, got {eps}"
        )));
    }
    let states = orbit
        .states
        .iter()
        .map(|s| PhaseState {
            q: s.q.clone(),
            p: s.p.iter().map(|x| eps * x).collect(),
            t: s.t / eps,
        })
        .collect();
    Ok(OrbitSegment {
        states,
        step: orbit.step / eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{FourierMode, FourierPotential};

    fn pendulum() -> FourierPotential {
        FourierPotential::new(1, vec![FourierMode::new(vec![1], 0, 1.0, 0.0)], 1.0).unwrap()
    }

    #[test]
    fn free_flight_step() {
        let pot = FourierPotential::zero(3).unwrap();
        let s = PhaseState::new(vec![0.0; 3], vec![1.0, 0.0, 0.0], 0.0);
        let next = step_vv(&pot, &s, 0.1);
        assert_eq!(next.q, vec![0.1, 0.0, 0.0]);
        assert_eq!(next.p, s.p);
        assert!((next.t - 0.1).abs() < 1e-15);
    }

    #[test]
    fn step_is_reversible_for_autonomous_potential() {
        let pot = pendulum();
        let s = PhaseState::new(vec![0.13], vec![0.7], 0.0);
        let mut fwd = step_vv(&pot, &s, 0.01);
        fwd.p[0] = -fwd.p[0];
        let mut back = step_vv(&pot, &fwd, 0.01);
        back.p[0] = -back.p[0];
        assert!((back.q[0] - s.q[0]).abs() < 1e-13);
        assert!((back.p[0] - s.p[0]).abs() < 1e-13);
    }

    /// Classical RK4 with a tiny step as the reference solution.
    fn rk4_reference(
        pot: &FourierPotential,
        s: &PhaseState,
        duration: f64,
        steps: usize,
    ) -> (f64, f64) {
        let h = duration / steps as f64;
        let (mut q, mut p, mut t) = (s.q[0], s.p[0], s.t);
        let force = |q: f64, t: f64| -pot.grad_q(&[q], t)[0];
        for _ in 0..steps {
            let (k1q, k1p) = (p, force(q, t));
            let (k2q, k2p) = (p + 0.5 * h * k1p, force(q + 0.5 * h * k1q, t + 0.5 * h));
            let (k3q, k3p) = (p + 0.5 * h * k2p, force(q + 0.5 * h * k2q, t + 0.5 * h));
            let (k4q, k4p) = (p + h * k3p, force(q + h * k3q, t + h));
            q += h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
            p += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
            t += h;
        }
        (q, p)
    }

    #[test]
    fn local_error_is_third_order() {
        let pot = pendulum();
        let s = PhaseState::new(vec![0.1], vec![0.5], 0.0);
        let err = |h: f64| {
            let one = step_vv(&pot, &s, h);
            let (q, _) = rk4_reference(&pot, &s, h, 64);
            (one.q[0] - q).abs()
        };
        let (e1, e2) = (err(0.02), err(0.01));
        let ratio = e1 / e2;
        assert!((ratio - 8.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn global_error_is_second_order() {
        let pot =
            FourierPotential::new(1, vec![FourierMode::new(vec![1], 1, 0.5, 0.2)], 0.0).unwrap();
        let s = PhaseState::new(vec![0.1], vec![0.8], 0.0);
        let (q_ref, p_ref) = rk4_reference(&pot, &s, 1.0, 20_000);
        let hs = [0.02, 0.01, 0.005];
        let errs: Vec<f64> = hs
            .iter()
            .map(|&h| {
                let end = integrate(&pot, &s, 1.0, h).unwrap();
                let e = end.last();
                (e.q[0] - q_ref).abs().max((e.p[0] - p_ref).abs())
            })
            .collect();
        let slope = crate::numerics::loglog_slope(&hs, &errs).unwrap();
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn free_flow_is_sampled_exactly() {
        let pot = FourierPotential::zero(2).unwrap();
        let s = PhaseState::new(vec![0.5, -0.25], vec![1.0, -2.0], 0.0);
        let orbit = integrate(&pot, &s, 1.0, 0.125).unwrap();
        assert_eq!(orbit.len(), 9);
        for (k, st) in orbit.states.iter().enumerate() {
            let t = k as f64 * 0.125;
            assert_eq!(st.t, t);
            assert!((st.q[0] - (0.5 + t)).abs() < 1e-15);
            assert!((st.q[1] - (-0.25 - 2.0 * t)).abs() < 1e-15);
        }
        let phi = time_one_map(&pot, &s, 0.125).unwrap();
        assert!((phi.q[0] - 1.5).abs() < 1e-15 && (phi.q[1] + 2.25).abs() < 1e-15);
        assert_eq!(phi.p, s.p);
    }

    #[test]
    fn energy_is_conserved_without_secular_drift() {
        let pot = FourierPotential::new(
            2,
            vec![
                FourierMode::new(vec![1, 0], 0, 0.1, 0.0),
                FourierMode::new(vec![1, 1], 0, 0.05, 1.0),
            ],
            0.0,
        )
        .unwrap()
        .normalize();
        let s = PhaseState::new(vec![0.2, 0.3], vec![0.9, 0.4], 0.0);
        let orbit = integrate(&pot, &s, 100.0, 1e-3).unwrap();
        let end_error = (energy(&pot, orbit.last()) - energy(&pot, orbit.first())).abs();
        assert!(end_error < 1e-6, "end error {end_error}");
        let drift_100 = orbit.energy_drift(&pot);
        let short = OrbitSegment {
            states: orbit.states[..=10_000].to_vec(),
            step: orbit.step,
        };
        let drift_10 = short.energy_drift(&pot);
        assert!(drift_100 <= 10.0 * drift_10, "{drift_100} vs {drift_10}");
    }

    #[test]
    fn forward_backward_round_trip() {
        let pot = pendulum();
        let s = PhaseState::new(vec![0.3], vec![1.1], 0.0);
        let fwd = integrate(&pot, &s, 1.0, 1e-4).unwrap();
        let mut turn = fwd.last().clone();
        turn.p[0] = -turn.p[0];
        turn.t = 0.0;
        let back = integrate(&pot, &turn, 1.0, 1e-4).unwrap();
        let end = back.last();
        assert!((end.q[0] - s.q[0]).abs() < 1e-10);
        assert!((-end.p[0] - s.p[0]).abs() < 1e-10);
    }

    #[test]
    fn divergence_is_reported() {
        let well = crate::potential::QuadraticWell { n: 1, k: -1e6 };
        let s = PhaseState::new(vec![1.0], vec![0.0], 0.0);
        match integrate(&well, &s, 100.0, 0.1) {
            Err(DynamicsError::Diverged { last_valid_time }) => assert!(last_valid_time < 100.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rescaling_identity_and_free_flow() {
        let pot = FourierPotential::zero(1).unwrap();
        let s = PhaseState::new(vec![0.0], vec![2.0], 0.0);
        let orbit = integrate(&pot, &s, 1.0, 0.1).unwrap();
        assert_eq!(rescale_orbit(&orbit, 1.0).unwrap(), orbit);
        let r = rescale_orbit(&orbit, 0.5).unwrap();
        assert!(r.states.iter().all(|st| st.p[0] == 1.0));
        assert!((r.duration() - 2.0).abs() < 1e-12);
        assert!(rescale_orbit(&orbit, 0.0).is_err());
    }

    #[test]
    fn rescaling_round_trip_is_exact() {
        let pot = pendulum();
        let s = PhaseState::new(vec![0.1], vec![0.4], 0.0);
        let orbit = integrate(&pot, &s, 1.0, 0.01).unwrap();
        let eps = 0.25;
        let there = rescale_orbit(&orbit, eps).unwrap();
        let back = rescale_orbit(&there, 1.0 / eps).unwrap();
        assert!(back.max_deviation(&orbit) < 1e-15);
    }

    #[test]
    fn step_policy_scales_with_momentum() {
        let policy = StepPolicy::default();
        let slow = PhaseState::new(vec![0.0], vec![0.5], 0.0);
        let fast = PhaseState::new(vec![0.0], vec![4.0], 0.0);
        assert_eq!(policy.step_for(&slow), 1e-3);
        assert_eq!(policy.step_for(&fast), 2.5e-4);
        assert!(StepPolicy::Fixed { step: -1.0 }.validate().is_err());
    }

    #[test]
    fn csv_has_expected_columns() {
        let pot = FourierPotential::zero(2).unwrap();
        let s = PhaseState::new(vec![0.0, 0.0], vec![1.0, 0.0], 0.0);
        let orbit = integrate(&pot, &s, 0.2, 0.1).unwrap();
        let mut buf = Vec::new();
        orbit.write_csv(&pot, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,q_1,q_2,p_1,p_2,H");
        assert_eq!(lines.count(), 3);
    }
}
